//! SRSF transforms, warp algebra, elastic alignment and sample registration.

pub mod dp;
pub mod register;
pub mod warp;

pub use dp::{
    align_pair, align_pair_with, align_srsfs, amplitude_distance, amplitude_distance_with,
    fr_distance, Alignment, DpOptions,
};
pub use register::{
    align_to_template, register_sample, register_sample_with, RegistrationOptions,
    RegistrationResult,
};
pub use warp::{
    compose, function_of_srsf, invert_warping, mean_warp, srsf_of_function, srsf_of_warping,
    warp_srsf, warping_of_srsf, Srsf, SrsfKind, WarpingFunction,
};
