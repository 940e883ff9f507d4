//! fPCA, switching-coefficient VAR on fPC scores, the fFPE criteria and the
//! amplitude-only baseline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::curves::{check_same_grid, weighted_dot, Curve, Grid};
use crate::error::{Error, Result};
use crate::warp_model::StateChain;

/// Relative threshold below which an eigenvalue counts as zero.
const EIGEN_REL_TOL: f64 = 1e-10;

/// Functional principal components of a curve sample.
#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub mean: Curve,
    /// Orthonormal in L², `d` of them.
    pub eigenfunctions: Vec<Curve>,
    /// Every eigenvalue of the discretized covariance, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// `N × d` matrix of scores `⟨Y_n − μ, ν_m⟩`.
    pub scores: DMatrix<f64>,
    pub d: usize,
    /// Set when fewer than the requested `d` eigenvalues were positive.
    pub reduced: bool,
}

impl FpcaModel {
    /// Sum of the eigenvalues beyond the first `d`.
    pub fn tail(&self, d: usize) -> f64 {
        self.eigenvalues.iter().skip(d).sum()
    }

    /// Scores of a new curve on the first `d` eigenfunctions.
    pub fn project(&self, curve: &Curve) -> Result<Vec<f64>> {
        check_same_grid(&self.mean, curve)?;
        let w = self.mean.grid().weights();
        let centred: Vec<f64> = curve.values().iter().zip(self.mean.values()).map(|(a, b)| a - b).collect();
        Ok(self
            .eigenfunctions
            .iter()
            .map(|nu| weighted_dot(&w, &centred, nu.values()))
            .collect())
    }

    /// `μ + Σ_m y_m ν_m` over the supplied scores.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Curve> {
        if scores.len() > self.eigenfunctions.len() {
            return Err(Error::dim(format!(
                "{} scores for {} eigenfunctions",
                scores.len(),
                self.eigenfunctions.len()
            )));
        }
        let mut v = self.mean.values().to_vec();
        for (y, nu) in scores.iter().zip(&self.eigenfunctions) {
            v.iter_mut().zip(nu.values()).for_each(|(a, b)| *a += y * b);
        }
        Curve::new(self.mean.grid(), v)
    }

    /// Keep only the first `d` components.
    pub fn truncated(&self, d: usize) -> FpcaModel {
        let d = d.min(self.d);
        FpcaModel {
            mean: self.mean.clone(),
            eigenfunctions: self.eigenfunctions[..d].to_vec(),
            eigenvalues: self.eigenvalues.clone(),
            scores: self.scores.columns(0, d).into_owned(),
            d,
            reduced: self.reduced,
        }
    }
}

/// fPCA with trapezoid quadrature: eigendecompose `W^½ C W^½`, map the
/// eigenvectors back by `W^−½`, fix signs so each eigenfunction's
/// largest-magnitude value is positive.
pub fn fpca(curves: &[Curve], d: usize) -> Result<FpcaModel> {
    let n = curves.len();
    if n == 0 || d == 0 || d > n {
        return Err(Error::input(format!("fpca needs N ≥ d ≥ 1 (N = {n}, d = {d})")));
    }
    for c in &curves[1..] {
        check_same_grid(&curves[0], c)?;
    }
    let grid: Grid = curves[0].grid();
    let p = grid.n_points();
    let w = grid.weights();
    let root_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let mut mean = vec![0.0; p];
    for c in curves {
        mean.iter_mut().zip(c.values()).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let scale = 1.0 / (n as f64).sqrt();
    let b = DMatrix::from_fn(n, p, |i, j| (curves[i].values()[j] - mean[j]) * root_w[j] * scale);
    // Right singular vectors of B via the smaller Gram matrix.
    let (eigenvalues, vectors) = if n <= p {
        let eig = (&b * b.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vecs: Vec<DVector<f64>> = order
            .iter()
            .map(|&i| {
                let v = b.transpose() * eig.eigenvectors.column(i);
                let nrm = v.norm();
                if nrm > 0.0 { v / nrm } else { v }
            })
            .collect();
        (vals, vecs)
    } else {
        let eig = (b.transpose() * &b).symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vecs = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        (vals, vecs)
    };
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let positive = eigenvalues
        .iter()
        .filter(|&&l| l > EIGEN_REL_TOL * top && l > 1e-300)
        .count();
    let kept = d.min(positive);
    let reduced = kept < d;
    if reduced {
        log::debug!("fpca: only {positive} positive eigenvalues, keeping {kept} of {d} requested");
    }
    let mut eigenfunctions = Vec::with_capacity(kept);
    for v in vectors.iter().take(kept) {
        let mut nu: Vec<f64> = (0..p)
            .map(|j| if root_w[j] > 0.0 { v[j] / root_w[j] } else { 0.0 })
            .collect();
        let norm = weighted_dot(&w, &nu, &nu).sqrt();
        nu.iter_mut().for_each(|x| *x /= norm);
        let peak = nu.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            nu.iter_mut().for_each(|x| *x = -*x);
        }
        eigenfunctions.push(Curve::from_raw(grid, nu));
    }
    let mean = Curve::from_raw(grid, mean);
    let mut scores = DMatrix::zeros(n, kept);
    for (r, c) in curves.iter().enumerate() {
        let centred: Vec<f64> = c.values().iter().zip(mean.values()).map(|(a, b)| a - b).collect();
        for (m, nu) in eigenfunctions.iter().enumerate() {
            scores[(r, m)] = weighted_dot(&w, &centred, nu.values());
        }
    }
    Ok(FpcaModel { mean, eigenfunctions, eigenvalues, scores, d: kept, reduced })
}

/// VAR(p) on `d`-dimensional scores whose coefficients switch with the
/// previous curve's phase state.
#[derive(Debug, Clone)]
pub struct SwitchingVarModel {
    pub order: usize,
    pub dim: usize,
    pub n_states: usize,
    /// `coefficients[k][h-1]` is `Φ_h^{(k)}`, a `d × d` matrix.
    pub coefficients: Vec<Vec<DMatrix<f64>>>,
    pub residual_cov: DMatrix<f64>,
    /// Number of targets assigned to each state.
    pub per_state_counts: Vec<usize>,
    /// States whose coefficients fell back to the pooled fit.
    pub fallback: Vec<bool>,
}

/// Regressor row `[Y_{t−1}', …, Y_{t−p}']` for target index `t`.
fn lag_row(scores: &DMatrix<f64>, t: usize, p: usize) -> Vec<f64> {
    let d = scores.ncols();
    let mut row = Vec::with_capacity(p * d);
    for h in 1..=p {
        row.extend(scores.row(t - h).iter());
    }
    row
}

/// Least squares `Z ≈ X B`; returns `B` (`pd × d`).
fn least_squares(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    x.clone()
        .svd(true, true)
        .solve(z, 1e-12)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))
}

fn split_coefficients(b: &DMatrix<f64>, p: usize, d: usize) -> Vec<DMatrix<f64>> {
    (0..p).map(|h| b.rows(h * d, d).transpose()).collect()
}

/// Per-state least squares. Target `t` (for `t ≥ p`) joins state
/// `phase_labels[t−1]`. The pooled residual covariance divides by
/// `N − p − g·p·d`, or by the number of targets when that is not positive.
pub fn fit_switching_var(
    scores: &DMatrix<f64>,
    phase_labels: &StateChain,
    p: usize,
    g: usize,
) -> Result<SwitchingVarModel> {
    let n = scores.nrows();
    let d = scores.ncols();
    if p == 0 || d == 0 {
        return Err(Error::input("VAR order and dimension must be positive"));
    }
    if phase_labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} score vectors", phase_labels.len())));
    }
    if phase_labels.n_states() != g {
        return Err(Error::dim(format!(
            "chain has {} states, model expects {g}",
            phase_labels.n_states()
        )));
    }
    if n <= p {
        return Err(Error::Fit(format!("VAR({p}) needs more than {p} observations")));
    }
    let targets: Vec<usize> = (p..n).collect();
    let rows = |ts: &[usize]| -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(ts.len(), p * d, |r, c| lag_row(scores, ts[r], p)[c]);
        let z = DMatrix::from_fn(ts.len(), d, |r, c| scores[(ts[r], c)]);
        (x, z)
    };
    let (x_all, z_all) = rows(&targets);
    let pooled = least_squares(&x_all, &z_all)?;
    let mut coefficients = Vec::with_capacity(g);
    let mut counts = vec![0usize; g];
    let mut fallback = vec![false; g];
    let mut betas = Vec::with_capacity(g);
    for k in 0..g {
        let ts: Vec<usize> = targets.iter().copied().filter(|&t| phase_labels.labels()[t - 1] == k).collect();
        counts[k] = ts.len();
        let beta = if ts.len() < p * d + 1 {
            fallback[k] = true;
            if !ts.is_empty() {
                log::debug!("state {k} has {} observations; using pooled VAR coefficients", ts.len());
            }
            pooled.clone()
        } else {
            let (x, z) = rows(&ts);
            least_squares(&x, &z)?
        };
        coefficients.push(split_coefficients(&beta, p, d));
        betas.push(beta);
    }
    let mut ss = DMatrix::<f64>::zeros(d, d);
    for (r, &t) in targets.iter().enumerate() {
        let k = phase_labels.labels()[t - 1];
        let pred = x_all.row(r) * &betas[k];
        let e = z_all.row(r) - pred;
        ss += e.transpose() * &e;
    }
    let dof = n as f64 - p as f64 - (g * p * d) as f64;
    let divisor = if dof > 0.0 { dof } else { targets.len() as f64 };
    Ok(SwitchingVarModel {
        order: p,
        dim: d,
        n_states: g,
        coefficients,
        residual_cov: ss / divisor,
        per_state_counts: counts,
        fallback,
    })
}

impl SwitchingVarModel {
    fn check_recent(&self, recent: &DMatrix<f64>) -> Result<()> {
        if recent.nrows() < self.order || recent.ncols() != self.dim {
            return Err(Error::dim(format!(
                "recent scores are {}×{}, model needs {}×{}",
                recent.nrows(),
                recent.ncols(),
                self.order,
                self.dim
            )));
        }
        Ok(())
    }

    /// `Σ_h Φ_h^{(state)} Y_{N+1−h}`; row `h−1` of `recent` is `Y_{N+1−h}`.
    pub fn predict_state(&self, recent: &DMatrix<f64>, state: usize) -> Result<DVector<f64>> {
        self.check_recent(recent)?;
        if state >= self.n_states {
            return Err(Error::input(format!("state {state} out of range for {} states", self.n_states)));
        }
        let mut out = DVector::zeros(self.dim);
        for (h, phi) in self.coefficients[state].iter().enumerate() {
            out += phi * recent.row(h).transpose();
        }
        Ok(out)
    }

    pub fn residual_trace(&self) -> f64 {
        self.residual_cov.trace()
    }
}

/// Binary predictor: coefficients of the given state only.
pub fn predict_scores_binary(
    model: &SwitchingVarModel,
    recent: &DMatrix<f64>,
    state: usize,
) -> Result<DVector<f64>> {
    model.predict_state(recent, state)
}

/// Weighted predictor: mixture of the per-state predictions.
pub fn predict_scores_weighted(
    model: &SwitchingVarModel,
    recent: &DMatrix<f64>,
    weights: &[f64],
) -> Result<DVector<f64>> {
    if weights.len() != model.n_states {
        return Err(Error::dim(format!("{} weights for {} states", weights.len(), model.n_states)));
    }
    let mut out = DVector::zeros(model.dim);
    for (k, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            out += model.predict_state(recent, k)? * w;
        }
    }
    Ok(out)
}

/// `((N + g·p·d)/N)·tr + tail`.
pub fn ffpe_modified(p: usize, d: usize, n: usize, g: usize, residual_trace: f64, eigen_tail: f64) -> f64 {
    let n = n as f64;
    (n + (g * p * d) as f64) / n * residual_trace + eigen_tail
}

/// `((N + p·d)/(N − p·d))·tr + tail`; requires `N > p·d`.
pub fn ffpe_standard(p: usize, d: usize, n: usize, residual_trace: f64, eigen_tail: f64) -> Result<f64> {
    let pd = (p * d) as f64;
    let n = n as f64;
    if n <= pd {
        return Err(Error::input(format!("standard fFPE needs N > pd (N = {n}, pd = {pd})")));
    }
    Ok((n + pd) / (n - pd) * residual_trace + eigen_tail)
}

/// Grid search result over `(p, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfpeSelection {
    pub chosen_p: usize,
    pub chosen_d: usize,
    pub criterion_table: BTreeMap<(usize, usize), f64>,
}

fn argmin_table(table: BTreeMap<(usize, usize), f64>) -> Result<FfpeSelection> {
    // Ties: smallest d, then smallest p.
    let mut best: Option<((usize, usize), f64)> = None;
    for (&(p, d), &v) in &table {
        let better = match best {
            None => true,
            Some(((bp, bd), bv)) => v < bv || (v == bv && (d, p) < (bd, bp)),
        };
        if better {
            best = Some(((p, d), v));
        }
    }
    let ((chosen_p, chosen_d), _) =
        best.ok_or_else(|| Error::Fit("no feasible (p, d) candidate".into()))?;
    Ok(FfpeSelection { chosen_p, chosen_d, criterion_table: table })
}

/// Minimise the modified fFPE over `1..=p_max × 1..=d_max` by fitting each
/// candidate switching VAR. Infeasible candidates are left out of the table.
pub fn select_order(
    curves: &[Curve],
    phase_labels: &StateChain,
    p_max: usize,
    d_max: usize,
    g: usize,
) -> Result<FfpeSelection> {
    let model = fpca(curves, d_max.min(curves.len()).max(1))?;
    select_order_scores(&model, phase_labels, p_max, d_max, g)
}

/// As [`select_order`] on an already fitted fPCA.
pub fn select_order_scores(
    model: &FpcaModel,
    phase_labels: &StateChain,
    p_max: usize,
    d_max: usize,
    g: usize,
) -> Result<FfpeSelection> {
    if p_max == 0 || d_max == 0 {
        return Err(Error::input("p_max and d_max must be at least 1"));
    }
    let n = model.scores.nrows();
    let d_top = d_max.min(model.d).max(1);
    let cands: Vec<(usize, usize)> = (1..=p_max).flat_map(|p| (1..=d_top).map(move |d| (p, d))).collect();
    let table: BTreeMap<(usize, usize), f64> = cands
        .par_iter()
        .filter_map(|&(p, d)| {
            if model.d == 0 {
                return Some(((p, d), model.tail(0)));
            }
            let scores = model.scores.columns(0, d).into_owned();
            let fit = fit_switching_var(&scores, phase_labels, p, g).ok()?;
            Some(((p, d), ffpe_modified(p, d, n, g, fit.residual_trace(), model.tail(d))))
        })
        .collect();
    argmin_table(table)
}

/// Single-regime VAR used by the amplitude-only baseline, with residual
/// covariance `(1/n) Σ z z'` over the `n` residuals.
pub fn fit_var(scores: &DMatrix<f64>, p: usize) -> Result<SwitchingVarModel> {
    let n = scores.nrows();
    let chain = StateChain::new(vec![0; n], 1)?;
    let mut model = fit_switching_var(scores, &chain, p, 1)?;
    let dof = n as f64 - p as f64 - (p * scores.ncols()) as f64;
    let targets = (n - p) as f64;
    if dof > 0.0 {
        model.residual_cov *= dof / targets;
    }
    Ok(model)
}

/// Standard-fFPE grid search for the single-regime baseline.
pub fn select_order_standard(model: &FpcaModel, p_max: usize, d_max: usize) -> Result<FfpeSelection> {
    if p_max == 0 || d_max == 0 {
        return Err(Error::input("p_max and d_max must be at least 1"));
    }
    let n = model.scores.nrows();
    let d_top = d_max.min(model.d).max(1);
    let cands: Vec<(usize, usize)> = (1..=p_max).flat_map(|p| (1..=d_top).map(move |d| (p, d))).collect();
    let table: BTreeMap<(usize, usize), f64> = cands
        .par_iter()
        .filter_map(|&(p, d)| {
            if model.d == 0 {
                return Some(((p, d), model.tail(0)));
            }
            let scores = model.scores.columns(0, d).into_owned();
            let fit = fit_var(&scores, p).ok()?;
            let v = ffpe_standard(p, d, n, fit.residual_trace(), model.tail(d)).ok()?;
            Some(((p, d), v))
        })
        .collect();
    argmin_table(table)
}

/// Order-selection bounds used when `p` or `d` is not fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderSearch {
    pub p_max: usize,
    pub d_max: usize,
}

impl Default for OrderSearch {
    fn default() -> Self {
        Self { p_max: 3, d_max: 6 }
    }
}

/// Fitted amplitude-only model: fPCA plus a single VAR on the scores.
#[derive(Debug, Clone)]
pub struct AoModel {
    pub fpca: FpcaModel,
    /// `None` when the sample has no variation.
    pub var: Option<SwitchingVarModel>,
    pub p: usize,
    pub d: usize,
}

impl AoModel {
    /// Fit on `curves`; `p`, `d` chosen by the standard fFPE when absent.
    pub fn fit(curves: &[Curve], p: Option<usize>, d: Option<usize>, search: OrderSearch) -> Result<Self> {
        let n = curves.len();
        let p_cap = p.unwrap_or(search.p_max);
        if n <= p_cap {
            return Err(Error::input(format!("AO prediction needs N > p (N = {n}, p = {p_cap})")));
        }
        let d_req = d.unwrap_or(search.d_max).min(n).max(1);
        let full = fpca(curves, d_req)?;
        if full.d == 0 {
            return Ok(Self { fpca: full, var: None, p: p.unwrap_or(1), d: 0 });
        }
        let (p, d) = match (p, d) {
            (Some(p), Some(_)) => (p, full.d),
            _ => {
                let sel = select_order_standard(
                    &full,
                    p.map_or(search.p_max, |x| x),
                    d.map_or(search.d_max, |x| x),
                )?;
                (p.unwrap_or(sel.chosen_p), d.map_or(sel.chosen_d, |_| full.d))
            }
        };
        let fp = full.truncated(d);
        let var = fit_var(&fp.scores, p)?;
        Ok(Self { fpca: fp, var: Some(var), p, d })
    }

    /// One-step prediction after `history` (oldest first, at least `p` curves).
    pub fn predict_next(&self, history: &[Curve]) -> Result<Curve> {
        let Some(var) = &self.var else {
            return Ok(self.fpca.mean.clone());
        };
        if history.len() < self.p {
            return Err(Error::input(format!("need {} recent curves, got {}", self.p, history.len())));
        }
        let mut recent = DMatrix::zeros(self.p, self.d);
        for h in 0..self.p {
            let s = self.fpca.project(&history[history.len() - 1 - h])?;
            for (m, v) in s.into_iter().enumerate() {
                recent[(h, m)] = v;
            }
        }
        let y = predict_scores_binary(var, &recent, 0)?;
        self.fpca.reconstruct(y.as_slice())
    }
}

/// One-step amplitude-only forecast of the curve after `curves`.
pub fn ao_predict(curves: &[Curve], p: Option<usize>, d: Option<usize>) -> Result<Curve> {
    let model = AoModel::fit(curves, p, d, OrderSearch::default())?;
    model.predict_next(curves)
}
