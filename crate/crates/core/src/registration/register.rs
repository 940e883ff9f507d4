//! Whole-sample registration into amplitude and phase components.

use rayon::prelude::*;

use crate::curves::{check_same_grid, Curve};
use crate::error::{Error, Result};
use crate::registration::dp::{align_srsfs, Alignment, DpOptions};
use crate::registration::warp::{
    compose, invert_warping, mean_warp, srsf_of_function, warp_srsf, Srsf, SrsfKind,
    WarpingFunction,
};

/// Iteration controls for [`register_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub dp: DpOptions,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-2,
            dp: DpOptions::default(),
        }
    }
}

/// Decomposition `f_n = Y_n ∘ γ_n`.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Registered curves `Y_n`.
    pub amplitudes: Vec<Curve>,
    /// Phase warps `γ_n`.
    pub warpings: Vec<WarpingFunction>,
    /// Alignment warps `γ_n⁻¹`, so that `Y_n = f_n ∘ γ_n⁻¹`.
    pub alignments: Vec<WarpingFunction>,
    /// Centered template SRSF the amplitudes are aligned to.
    pub template_srsf: Srsf,
    pub iterations: usize,
    pub converged: bool,
}

fn mean_srsf(qs: &[Srsf]) -> Srsf {
    let grid = qs[0].curve().grid();
    let mut acc = vec![0.0; grid.n_points()];
    for q in qs {
        for (a, v) in acc.iter_mut().zip(q.curve().values()) {
            *a += v;
        }
    }
    let n = qs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Srsf::new(Curve::from_raw(grid, acc), SrsfKind::General)
}

/// Register with default options apart from the iteration controls.
pub fn register_sample(curves: &[Curve], max_iter: usize, tol: f64) -> Result<RegistrationResult> {
    register_sample_with(
        curves,
        &RegistrationOptions {
            max_iter,
            tol,
            ..RegistrationOptions::default()
        },
    )
}

pub fn register_sample_with(curves: &[Curve], opts: &RegistrationOptions) -> Result<RegistrationResult> {
    if curves.len() < 2 {
        return Err(Error::input("registration needs at least 2 curves"));
    }
    for c in &curves[1..] {
        check_same_grid(&curves[0], c)?;
    }
    let qs: Vec<Srsf> = curves.par_iter().map(srsf_of_function).collect();
    let mut template = mean_srsf(&qs);
    let mut aligns: Vec<WarpingFunction> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter.max(1) {
        iterations += 1;
        let step: Vec<(WarpingFunction, Srsf)> = qs
            .par_iter()
            .map(|q| {
                let Alignment { warp, .. } = align_srsfs(&template, q, &opts.dp)?;
                let qw = warp_srsf(q, &warp)?;
                Ok((warp, qw))
            })
            .collect::<Result<_>>()?;
        let (w, aligned): (Vec<_>, Vec<_>) = step.into_iter().unzip();
        aligns = w;
        let next = mean_srsf(&aligned);
        let denom = template.norm().max(1e-12);
        let change = crate::curves::l2_distance(next.curve(), template.curve())? / denom;
        template = next;
        log::debug!("registration iteration {iterations}: relative template change {change:.3e}");
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("registration stopped after {iterations} iterations without converging");
    }

    // Centre so the mean alignment warp is the identity.
    let centre_inv = invert_warping(&mean_warp(&aligns)?)?;
    let alignments: Vec<WarpingFunction> = aligns
        .par_iter()
        .map(|a| a.compose(&centre_inv))
        .collect::<Result<_>>()?;
    let template_srsf = warp_srsf(&template, &centre_inv)?;
    let (amplitudes, warpings): (Vec<Curve>, Vec<WarpingFunction>) = curves
        .par_iter()
        .zip(alignments.par_iter())
        .map(|(f, a)| Ok((compose(f, a)?, invert_warping(a)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(RegistrationResult {
        amplitudes,
        warpings,
        alignments,
        template_srsf,
        iterations,
        converged,
    })
}

/// Register a new curve against a fitted template.
///
/// Returns `(Y, γ)` with `f ≈ Y ∘ γ`.
pub fn align_to_template(
    f: &Curve,
    template: &Srsf,
    dp: &DpOptions,
) -> Result<(Curve, WarpingFunction)> {
    let q = srsf_of_function(f);
    let a = align_srsfs(template, &q, dp)?.warp;
    Ok((compose(f, &a)?, invert_warping(&a)?))
}
