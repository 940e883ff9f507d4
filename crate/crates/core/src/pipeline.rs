//! Two-stage shape-preserving (SP) prediction, Monte-Carlo cross-validation
//! of the state counts, and rolling-origin evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::amplitude::{
    fit_switching_var, fpca, predict_scores_binary, predict_scores_weighted, select_order_scores,
    AoModel, FpcaModel, OrderSearch, SwitchingVarModel,
};
use crate::curves::{l2_distance, Curve};
use crate::error::{Error, Result};
use crate::registration::{
    align_to_template, amplitude_distance_with, compose, register_sample_with, srsf_of_warping,
    DpOptions, RegistrationOptions, Srsf, WarpingFunction,
};
use crate::warp_model::{
    combine_states, kmeans_scores, ls_transition, one_hot, predict_warp_indicator, predict_warping,
    project_stochastic, restart_rng, spherical_kmeans, Prototypes, StateChain, TransitionMatrix,
    WarpMode, DEFAULT_RESTARTS,
};

/// How the switching VAR turns the phase state into an amplitude forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PredictorMode {
    /// Coefficients of the last curve's phase state.
    #[default]
    Binary,
    /// Mixture over states weighted by prototype similarity.
    Weighted,
}

impl FromStr for PredictorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Self::Binary),
            "weighted" => Ok(Self::Weighted),
            _ => Err(Error::Config(format!("unknown predictor mode '{s}'"))),
        }
    }
}

impl fmt::Display for PredictorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Binary => "binary",
            Self::Weighted => "weighted",
        })
    }
}

impl FromStr for WarpMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            _ => Err(Error::Config(format!("unknown warp mode '{s}'"))),
        }
    }
}

impl fmt::Display for WarpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
        })
    }
}

/// Prediction method compared by the evaluation routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sp,
    Ao,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(Self::Sp),
            "ao" => Ok(Self::Ao),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sp => "SP",
            Self::Ao => "AO",
        })
    }
}

/// Parameters of the SP model. `p` and `d` are chosen by the modified fFPE
/// when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SpModelConfig {
    pub g: usize,
    pub l: usize,
    pub p: Option<usize>,
    pub d: Option<usize>,
    pub predictor_mode: PredictorMode,
    pub warp_mode: WarpMode,
    /// DP lattice size; the curve grid is used when it matches.
    pub dp_grid: usize,
    pub seed: u64,
    pub restarts: usize,
    pub search: OrderSearch,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SpModelConfig {
    fn default() -> Self {
        Self {
            g: 4,
            l: 2,
            p: None,
            d: None,
            predictor_mode: PredictorMode::Binary,
            warp_mode: WarpMode::Soft,
            dp_grid: 101,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            search: OrderSearch::default(),
            max_iter: 10,
            tol: 1e-2,
        }
    }
}

impl SpModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.g == 0 {
            return bad("g");
        }
        if self.l == 0 {
            return bad("l");
        }
        if self.p == Some(0) {
            return bad("p");
        }
        if self.d == Some(0) {
            return bad("d");
        }
        if self.dp_grid < 2 {
            return Err(Error::Config("dp_grid must be at least 2".into()));
        }
        if self.search.p_max == 0 || self.search.d_max == 0 {
            return bad("order search bound");
        }
        Ok(())
    }

    /// DP options for curves on a grid of `n_points`.
    pub fn dp_options(&self, n_points: usize) -> DpOptions {
        if self.dp_grid == n_points {
            DpOptions::default()
        } else {
            DpOptions::with_lattice(self.dp_grid)
        }
    }

    /// Smallest training sample [`SpModel::fit`] accepts.
    pub fn min_sample(&self) -> usize {
        let p = self.p.unwrap_or(1);
        (self.g * self.l + p + 1).max(10)
    }
}

/// One-step forecast with its components.
#[derive(Debug, Clone)]
pub struct PredictionReport {
    pub predicted: Curve,
    pub predicted_amplitude: Curve,
    pub predicted_warping: WarpingFunction,
    pub l2_error: Option<f64>,
    pub amplitude_error: Option<f64>,
    /// False when registration hit its iteration cap.
    pub registration_converged: bool,
}

impl PredictionReport {
    /// Fill in both error metrics against the realised curve.
    pub fn score(&mut self, truth: &Curve, dp: &DpOptions) -> Result<()> {
        self.l2_error = Some(l2_distance(&self.predicted, truth)?);
        self.amplitude_error = Some(amplitude_distance_with(&self.predicted, truth, dp)?);
        Ok(())
    }
}

/// Per-curve state seen by the forecaster.
#[derive(Debug, Clone)]
struct Observation {
    warp: WarpingFunction,
    scores: Vec<f64>,
    phase: usize,
    amp: usize,
}

/// Fitted SP model.
#[derive(Debug, Clone)]
pub struct SpModel {
    pub config: SpModelConfig,
    pub template: Srsf,
    pub prototypes: Prototypes,
    pub phase_chain: StateChain,
    pub amp_chain: StateChain,
    pub transition: TransitionMatrix,
    pub fpca: FpcaModel,
    /// `None` when the amplitudes carry no variation.
    pub var: Option<SwitchingVarModel>,
    pub p: usize,
    pub d: usize,
    pub registration_converged: bool,
    amp_centroids: Vec<Vec<f64>>,
    train: Vec<Observation>,
    dp: DpOptions,
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

impl SpModel {
    pub fn fit(curves: &[Curve], config: &SpModelConfig) -> Result<Self> {
        config.validate()?;
        let n = curves.len();
        if n < config.min_sample() {
            return Err(Error::input(format!(
                "SP needs at least {} curves for g={}, l={}, got {n}",
                config.min_sample(),
                config.g,
                config.l
            )));
        }
        let dp = config.dp_options(curves[0].len());
        let reg = register_sample_with(
            curves,
            &RegistrationOptions { max_iter: config.max_iter, tol: config.tol, dp: dp.clone() },
        )?;

        // Phase states.
        let warp_srsfs: Vec<Srsf> = reg.warpings.iter().map(srsf_of_warping).collect::<Result<_>>()?;
        let (prototypes, phase_chain) = spherical_kmeans(&warp_srsfs, config.g, config.seed, config.restarts)?;

        // Amplitude fPCA and order.
        let d_req = config.d.unwrap_or(config.search.d_max).min(n);
        let full = fpca(&reg.amplitudes, d_req)?;
        let (p, d) = if full.d == 0 {
            (config.p.unwrap_or(1), 0)
        } else if let (Some(p), Some(_)) = (config.p, config.d) {
            (p, full.d)
        } else {
            let sel = select_order_scores(
                &full,
                &phase_chain,
                config.p.unwrap_or(config.search.p_max),
                config.d.unwrap_or(config.search.d_max),
                config.g,
            )?;
            (config.p.unwrap_or(sel.chosen_p), config.d.map_or(sel.chosen_d, |_| full.d))
        };
        let fp = full.truncated(d);
        let score_rows: Vec<Vec<f64>> = (0..n).map(|i| fp.scores.row(i).iter().copied().collect()).collect();

        // Amplitude states.
        let l = config.l.min(n);
        let amp_chain = if d == 0 {
            StateChain::new(vec![0; n], l)?
        } else {
            kmeans_scores(&score_rows, l, config.seed ^ 0xA5A5, config.restarts)?
        };
        let mut amp_centroids = vec![vec![0.0; d]; l];
        let mut counts = vec![0usize; l];
        for (row, &k) in score_rows.iter().zip(amp_chain.labels()) {
            counts[k] += 1;
            amp_centroids[k].iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        for (c, &m) in amp_centroids.iter_mut().zip(&counts) {
            if m > 0 {
                c.iter_mut().for_each(|a| *a /= m as f64);
            }
        }

        // Joint chain and transition.
        let joint = combine_states(&phase_chain, &amp_chain)?;
        let transition = project_stochastic(ls_transition(&joint)?.entries())?;

        let var = if d == 0 { None } else { Some(fit_switching_var(&fp.scores, &phase_chain, p, config.g)?) };
        if let Some(v) = &var {
            let pooled: Vec<usize> = (0..v.fallback.len()).filter(|&k| v.fallback[k]).collect();
            if !pooled.is_empty() {
                log::info!("phase states {pooled:?} have too few observations; using pooled VAR coefficients");
            }
        }
        let train = reg
            .warpings
            .iter()
            .zip(score_rows)
            .enumerate()
            .map(|(i, (w, scores))| Observation {
                warp: w.clone(),
                scores,
                phase: phase_chain.labels()[i],
                amp: amp_chain.labels()[i],
            })
            .collect();
        Ok(Self {
            config: SpModelConfig { l, ..config.clone() },
            template: reg.template_srsf,
            prototypes,
            phase_chain,
            amp_chain,
            transition,
            fpca: fp,
            var,
            p,
            d,
            registration_converged: reg.converged,
            amp_centroids,
            train,
            dp,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn dp_options(&self) -> &DpOptions {
        &self.dp
    }

    fn observe(&self, f: &Curve) -> Result<Observation> {
        let (y, warp) = align_to_template(f, &self.template, &self.dp)?;
        let scores = self.fpca.project(&y)?;
        let phase = self.prototypes.classify(&warp)?;
        let amp = if self.d == 0 { 0 } else { nearest(&self.amp_centroids, &scores) };
        Ok(Observation { warp, scores, phase, amp })
    }

    fn predict_from(&self, recent: &[&Observation]) -> Result<PredictionReport> {
        let last = recent[recent.len() - 1];
        let cfg = &self.config;
        let omega = one_hot(last.phase * cfg.l + last.amp, cfg.g * cfg.l);
        let indicator = predict_warp_indicator(&omega, &self.transition, cfg.g, cfg.l)?;
        let predicted_warping = predict_warping(&indicator, &self.prototypes, cfg.warp_mode)?;
        let predicted_amplitude = match &self.var {
            None => self.fpca.mean.clone(),
            Some(var) => {
                let mut m = DMatrix::zeros(self.p, self.d);
                for h in 0..self.p {
                    let obs = recent[recent.len() - 1 - h];
                    for (j, v) in obs.scores.iter().enumerate() {
                        m[(h, j)] = *v;
                    }
                }
                let y = match cfg.predictor_mode {
                    PredictorMode::Binary => predict_scores_binary(var, &m, last.phase)?,
                    PredictorMode::Weighted => {
                        let w = self.prototypes.weights(&last.warp)?;
                        predict_scores_weighted(var, &m, &w)?
                    }
                };
                self.fpca.reconstruct(y.as_slice())?
            }
        };
        let predicted = compose(&predicted_amplitude, &predicted_warping)?;
        Ok(PredictionReport {
            predicted,
            predicted_amplitude,
            predicted_warping,
            l2_error: None,
            amplitude_error: None,
            registration_converged: self.registration_converged,
        })
    }

    /// Forecast the curve following the training sample and `new_curves`,
    /// the curves observed since fitting (oldest first).
    pub fn predict_after(&self, new_curves: &[Curve]) -> Result<PredictionReport> {
        let need = self.p.min(new_curves.len());
        let observed: Vec<Observation> = new_curves[new_curves.len() - need..]
            .iter()
            .map(|f| self.observe(f))
            .collect::<Result<_>>()?;
        let from_train = self.p - need;
        let mut recent: Vec<&Observation> = self.train[self.train.len() - from_train..].iter().collect();
        recent.extend(observed.iter());
        self.predict_from(&recent)
    }
}

/// Fit on all curves and forecast the next one.
pub fn sp_fit_predict(curves: &[Curve], config: &SpModelConfig) -> Result<PredictionReport> {
    let model = SpModel::fit(curves, config)?;
    if !model.registration_converged {
        log::warn!("SP prediction uses a non-converged registration");
    }
    model.predict_after(&[])
}

/// Forecast each of `targets` one step ahead from a single fitted model,
/// conditioning on the realised history; returns `(l2, FR)` per target.
fn sequential_errors(
    train: &[Curve],
    targets: &[Curve],
    method: Method,
    config: &SpModelConfig,
) -> Result<Vec<(f64, f64)>> {
    let dp = config.dp_options(train[0].len());
    match method {
        Method::Sp => {
            let model = SpModel::fit(train, config)?;
            targets
                .par_iter()
                .enumerate()
                .map(|(i, truth)| {
                    let mut r = model.predict_after(&targets[..i])?;
                    r.score(truth, &dp)?;
                    Ok((r.l2_error.unwrap_or(f64::NAN), r.amplitude_error.unwrap_or(f64::NAN)))
                })
                .collect()
        }
        Method::Ao => {
            let model = AoModel::fit(train, config.p, config.d, config.search)?;
            let mut all: Vec<Curve> = train.to_vec();
            all.extend_from_slice(targets);
            targets
                .par_iter()
                .enumerate()
                .map(|(i, truth)| {
                    let pred = model.predict_next(&all[..train.len() + i])?;
                    Ok((l2_distance(&pred, truth)?, amplitude_distance_with(&pred, truth, &dp)?))
                })
                .collect()
        }
    }
}

/// Fit on the first `n_train` curves and forecast the rest sequentially.
pub fn holdout_errors(
    curves: &[Curve],
    n_train: usize,
    method: Method,
    config: &SpModelConfig,
) -> Result<Vec<(f64, f64)>> {
    if n_train == 0 || n_train >= curves.len() {
        return Err(Error::input(format!("training size {n_train} for {} curves", curves.len())));
    }
    sequential_errors(&curves[..n_train], &curves[n_train..], method, config)
}

/// Mean and standard deviation of both metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub l2_mean: f64,
    pub l2_sd: f64,
    pub fr_mean: f64,
    pub fr_sd: f64,
    pub n: usize,
    /// Evaluations that could not be fitted.
    pub failures: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

impl ErrorSummary {
    pub fn from_pairs(pairs: &[(f64, f64)], failures: usize) -> Self {
        let l2: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let fr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (l2_mean, l2_sd) = mean_sd(&l2);
        let (fr_mean, fr_sd) = mean_sd(&fr);
        Self { l2_mean, l2_sd, fr_mean, fr_sd, n: pairs.len(), failures }
    }
}

/// Cross-validated errors of one `(g, l)` candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvScore {
    pub mean_l2: f64,
    pub mean_fr: f64,
    pub splits_used: usize,
    /// Set when some split could not be fitted with this candidate.
    pub skipped: bool,
}

/// Monte-Carlo cross-validation over `(g, l)`.
///
/// Each split takes a block of `⌊train_fraction·N⌋` consecutive curves at a
/// seeded-random offset, fits on it and forecasts every curve after the block
/// one step ahead. All candidates share the same splits.
pub fn mc_cross_validate(
    curves: &[Curve],
    g_candidates: &[usize],
    l_candidates: &[usize],
    config: &SpModelConfig,
    n_splits: usize,
    train_fraction: f64,
) -> Result<BTreeMap<(usize, usize), CvScore>> {
    if !(train_fraction > 0.5 && train_fraction < 0.95) {
        return Err(Error::input(format!("train fraction {train_fraction} outside (0.5, 0.95)")));
    }
    if n_splits == 0 {
        return Err(Error::input("need at least one split"));
    }
    let n = curves.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::input(format!("{n} curves too few for train fraction {train_fraction}")));
    }
    let mut rng = restart_rng(config.seed, 0xC0FFEE);
    let offsets: Vec<usize> = (0..n_splits).map(|_| rng.random_range(0..n - n_train)).collect();
    let jobs: Vec<(usize, usize, usize)> = g_candidates
        .iter()
        .flat_map(|&g| l_candidates.iter().flat_map(move |&l| (0..n_splits).map(move |s| (g, l, s))))
        .collect();
    let results: Vec<((usize, usize), Option<Vec<(f64, f64)>>)> = jobs
        .par_iter()
        .map(|&(g, l, s)| {
            let off = offsets[s];
            let cfg = SpModelConfig { g, l, ..config.clone() };
            let out = sequential_errors(&curves[off..off + n_train], &curves[off + n_train..], Method::Sp, &cfg);
            match out {
                Ok(v) => ((g, l), Some(v)),
                Err(e) => {
                    log::warn!("cv candidate (g={g}, l={l}) split {s} skipped: {e}");
                    ((g, l), None)
                }
            }
        })
        .collect();
    let mut acc: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>, usize, bool)> = BTreeMap::new();
    for (key, out) in results {
        let e = acc.entry(key).or_insert_with(|| (Vec::new(), Vec::new(), 0, false));
        match out {
            Some(v) => {
                let (l2, fr): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                e.0.push(mean_sd(&l2).0);
                e.1.push(mean_sd(&fr).0);
                e.2 += 1;
            }
            None => e.3 = true,
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, (l2, fr, used, skipped))| {
            (k, CvScore { mean_l2: mean_sd(&l2).0, mean_fr: mean_sd(&fr).0, splits_used: used, skipped })
        })
        .collect())
}

/// Rolling-origin evaluation: refit on each window of `window` curves and
/// forecast the curve right after it.
pub fn rolling_evaluate(
    curves: &[Curve],
    window: usize,
    methods: &[Method],
    config: &SpModelConfig,
) -> Result<BTreeMap<Method, ErrorSummary>> {
    let n = curves.len();
    if window == 0 || window >= n {
        return Err(Error::input(format!("window {window} for {n} curves")));
    }
    let mut out = BTreeMap::new();
    for &method in methods {
        let per: Vec<Option<(f64, f64)>> = (0..n - window)
            .into_par_iter()
            .map(|k| match sequential_errors(&curves[k..k + window], &curves[k + window..=k + window], method, config) {
                Ok(v) => Some(v[0]),
                Err(e) => {
                    log::warn!("{method} window starting at {k} skipped: {e}");
                    None
                }
            })
            .collect();
        let ok: Vec<(f64, f64)> = per.iter().flatten().copied().collect();
        let failures = per.len() - ok.len();
        out.insert(method, ErrorSummary::from_pairs(&ok, failures));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{bspline_expand, BSplineBasis};
    use crate::curves::Grid;

    fn constant_series(n: usize) -> Vec<Curve> {
        let g = Grid::new(101).unwrap();
        let b = BSplineBasis::cubic(7).unwrap();
        let c = bspline_expand(&b, &[1.0, 1.0, 4.0, 1.0, 6.0, 1.0, 1.0], g).unwrap();
        vec![c; n]
    }

    fn small_config() -> SpModelConfig {
        SpModelConfig { g: 2, l: 1, restarts: 2, ..SpModelConfig::default() }
    }

    #[test]
    fn config_parsing_and_validation() {
        assert_eq!("Weighted".parse::<PredictorMode>().unwrap(), PredictorMode::Weighted);
        assert_eq!("hard".parse::<WarpMode>().unwrap(), WarpMode::Hard);
        assert_eq!("ao".parse::<Method>().unwrap(), Method::Ao);
        assert!("x".parse::<Method>().is_err());
        assert!(SpModelConfig { g: 0, ..SpModelConfig::default() }.validate().is_err());
        assert!(SpModelConfig { p: Some(0), ..SpModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn identical_curves_predict_the_common_curve() {
        let curves = constant_series(20);
        let r = sp_fit_predict(&curves, &small_config()).unwrap();
        assert!(r.predicted.sub(&curves[0]).unwrap().sup_norm() < 0.02);
        let back = compose(&r.predicted_amplitude, &r.predicted_warping).unwrap();
        assert!(back.sub(&r.predicted).unwrap().sup_norm() < 1e-8);
    }

    #[test]
    fn too_short_sample_rejected() {
        let curves = constant_series(5);
        assert!(sp_fit_predict(&curves, &small_config()).is_err());
    }

    #[test]
    fn rolling_constant_series_has_zero_error() {
        let curves = constant_series(14);
        let cfg = SpModelConfig { p: Some(1), d: Some(1), ..small_config() };
        let out = rolling_evaluate(&curves, 12, &[Method::Sp, Method::Ao], &cfg).unwrap();
        for s in out.values() {
            assert_eq!(s.failures, 0);
            assert!(s.l2_mean < 1e-6 && s.fr_mean < 1e-6, "{s:?}");
        }
    }

    fn shifted_series(n: usize) -> Vec<Curve> {
        let g = Grid::new(101).unwrap();
        (0..n)
            .map(|i| {
                let s = 0.05 * ((i as f64) * 1.3).sin();
                let a = 1.0 + 0.2 * ((i as f64) * 0.7).cos();
                Curve::from_fn(g, |x| {
                    a * (-(x - 0.35 - s).powi(2) / 0.01).exp() + 0.7 * (-(x - 0.7 - s).powi(2) / 0.01).exp()
                })
            })
            .collect()
    }

    #[test]
    fn composition_identity_and_valid_warp() {
        let curves = shifted_series(24);
        for mode in [WarpMode::Hard, WarpMode::Soft] {
            let cfg = SpModelConfig { warp_mode: mode, predictor_mode: PredictorMode::Weighted, ..small_config() };
            let r = sp_fit_predict(&curves, &cfg).unwrap();
            let back = compose(&r.predicted_amplitude, &r.predicted_warping).unwrap();
            assert!(back.sub(&r.predicted).unwrap().sup_norm() < 1e-8);
            let v = r.predicted_warping.values();
            assert_eq!(v[0], 0.0);
            assert_eq!(*v.last().unwrap(), 1.0);
            assert!(v.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn window_n_minus_one_matches_direct_fit() {
        let curves = shifted_series(16);
        let cfg = small_config();
        let out = rolling_evaluate(&curves, 15, &[Method::Sp], &cfg).unwrap();
        let mut r = sp_fit_predict(&curves[..15], &cfg).unwrap();
        r.score(&curves[15], &cfg.dp_options(101)).unwrap();
        let s = out[&Method::Sp];
        assert_eq!(s.n, 1);
        assert_eq!(s.l2_mean, r.l2_error.unwrap());
        assert_eq!(s.fr_mean, r.amplitude_error.unwrap());
    }

    #[test]
    fn rolling_is_reproducible() {
        let curves = shifted_series(16);
        let cfg = small_config();
        let a = rolling_evaluate(&curves, 13, &[Method::Sp, Method::Ao], &cfg).unwrap();
        let b = rolling_evaluate(&curves, 13, &[Method::Sp, Method::Ao], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_state_amplitude_path_matches_ao() {
        let curves = shifted_series(30);
        let cfg = SpModelConfig { g: 1, l: 1, p: Some(1), d: Some(2), ..SpModelConfig::default() };
        let sp = SpModel::fit(&curves, &cfg).unwrap();
        let reg = register_sample_with(
            &curves,
            &RegistrationOptions { max_iter: cfg.max_iter, tol: cfg.tol, dp: cfg.dp_options(101) },
        )
        .unwrap();
        let ao = AoModel::fit(&reg.amplitudes, Some(1), Some(2), OrderSearch::default()).unwrap();
        let a = &sp.var.as_ref().unwrap().coefficients[0][0];
        let b = &ao.var.as_ref().unwrap().coefficients[0][0];
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn cv_single_candidate_equals_direct() {
        let curves = shifted_series(24);
        let cfg = small_config();
        let cv = mc_cross_validate(&curves, &[2], &[1], &cfg, 1, 0.75).unwrap();
        let score = cv[&(2, 1)];
        assert_eq!(score.splits_used, 1);
        let mut rng = restart_rng(cfg.seed, 0xC0FFEE);
        let off = rng.random_range(0..24 - 18);
        let direct = sequential_errors(&curves[off..off + 18], &curves[off + 18..], Method::Sp, &cfg).unwrap();
        let m = direct.iter().map(|p| p.0).sum::<f64>() / direct.len() as f64;
        assert!((score.mean_l2 - m).abs() < 1e-12);
        assert!(mc_cross_validate(&curves, &[2], &[1], &cfg, 1, 0.4).is_err());
    }

    #[test]
    fn predict_after_empty_is_fit_predict() {
        let curves = shifted_series(20);
        let cfg = small_config();
        let model = SpModel::fit(&curves, &cfg).unwrap();
        let a = model.predict_after(&[]).unwrap();
        let b = sp_fit_predict(&curves, &cfg).unwrap();
        assert_eq!(a.predicted.values(), b.predicted.values());
        let c = model.predict_after(&curves[..3]).unwrap();
        assert!(c.predicted.values().iter().all(|v| v.is_finite()));
    }
}
