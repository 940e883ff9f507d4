//! Shape-preserving prediction of functional time series with phase variation.
//!
//! Each curve is split as `f_n = Y_n ∘ γ_n`. Phase warps `γ_n` are clustered
//! into prototype states whose Markov transitions predict the next warp, and
//! amplitude curves `Y_n` follow a VAR on fPC scores whose coefficients switch
//! with the phase state.

pub mod amplitude;
pub mod bspline;
pub mod curves;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod registration;
pub mod sim;
pub mod warp_model;

pub use curves::{Curve, Grid};
pub use error::{Error, Result};
