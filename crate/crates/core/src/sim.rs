//! Simulation setups with Markov-switching or autoregressive warps and
//! VAR-driven two-peak amplitudes, plus the experiment driver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bspline::{bspline_expand, BSplineBasis};
use crate::curves::{Curve, Grid};
use crate::error::{Error, Result};
use crate::pipeline::{holdout_errors, ErrorSummary, Method, SpModelConfig};
use crate::registration::{compose, WarpingFunction};
use crate::warp_model::{restart_rng, StateChain, TransitionMatrix};

/// Number of B-spline functions for warps and amplitudes.
pub const N_BASIS: usize = 7;
/// Minimum pairwise sup distance between the fixed prototypes.
pub const PROTOTYPE_MIN_SEP: f64 = 0.05;
/// Rotation angles (degrees) of the per-state VAR coefficient matrices.
pub const STATE_ANGLES: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
/// Innovation variance of each pronounced amplitude score.
pub const INNOVATION_VAR: f64 = 0.02;
/// Default ξ support for the Markov-switching setup.
pub const SETUP1_XI_RANGE: (f64, f64) = (0.5, 1.5);
/// Default ξ support for the autoregressive-warp setup.
pub const SETUP2_XI_RANGE: (f64, f64) = (0.1, 1.9);
/// VAR steps discarded before the first recorded score.
const BURN_IN: usize = 100;

/// Reading of the spread parameter in `N(1, 0.1)` for the minor scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpreadReading {
    Variance,
    #[default]
    StdDev,
}

impl SpreadReading {
    pub fn sd(self, spread: f64) -> f64 {
        match self {
            Self::Variance => spread.sqrt(),
            Self::StdDev => spread,
        }
    }
}

/// Parameters shared by the amplitude generators.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeConfig {
    pub lambda1: f64,
    pub minor_spread: f64,
    pub spread_reading: SpreadReading,
}

impl Default for AmplitudeConfig {
    fn default() -> Self {
        Self { lambda1: 0.8, minor_spread: 0.1, spread_reading: SpreadReading::StdDev }
    }
}

/// Markov-switching prototype warps.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup1Config {
    pub n: usize,
    pub p_diag: f64,
    pub tau: f64,
    pub lambda1: f64,
    pub seed: u64,
    pub n_replicates: usize,
    pub grid_points: usize,
    pub minor_spread: f64,
    pub spread_reading: SpreadReading,
    /// Support of the uniform warp increments ξ.
    pub xi_range: (f64, f64),
}

impl Default for Setup1Config {
    fn default() -> Self {
        Self {
            n: 200,
            p_diag: 0.9,
            tau: 0.2,
            lambda1: 0.8,
            seed: 1,
            n_replicates: 10,
            grid_points: 101,
            minor_spread: 0.1,
            spread_reading: SpreadReading::StdDev,
            xi_range: SETUP1_XI_RANGE,
        }
    }
}

impl Setup1Config {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.p_diag) || !open(self.tau) || !open(self.lambda1) {
            return Err(Error::Config("p_diag, tau and lambda1 must lie in (0, 1)".into()));
        }
        common_checks(self.n, self.n_replicates, self.grid_points, self.xi_range)
    }

    fn amplitude(&self) -> AmplitudeConfig {
        AmplitudeConfig {
            lambda1: self.lambda1,
            minor_spread: self.minor_spread,
            spread_reading: self.spread_reading,
        }
    }
}

/// Autoregressive warps `γ_{n+1} = βγ_n + (1−β)γᵉ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup2Config {
    pub n: usize,
    pub beta: f64,
    pub lambda1: f64,
    pub seed: u64,
    pub n_replicates: usize,
    pub grid_points: usize,
    pub minor_spread: f64,
    pub spread_reading: SpreadReading,
    /// Support of the uniform warp increments ξ.
    pub xi_range: (f64, f64),
}

impl Default for Setup2Config {
    fn default() -> Self {
        Self {
            n: 200,
            beta: 0.3,
            lambda1: 0.8,
            seed: 1,
            n_replicates: 10,
            grid_points: 101,
            minor_spread: 0.1,
            spread_reading: SpreadReading::StdDev,
            xi_range: SETUP2_XI_RANGE,
        }
    }
}

impl Setup2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) || !(self.lambda1 > 0.0 && self.lambda1 < 1.0) {
            return Err(Error::Config("beta and lambda1 must lie in (0, 1)".into()));
        }
        common_checks(self.n, self.n_replicates, self.grid_points, self.xi_range)
    }

    fn amplitude(&self) -> AmplitudeConfig {
        AmplitudeConfig {
            lambda1: self.lambda1,
            minor_spread: self.minor_spread,
            spread_reading: self.spread_reading,
        }
    }
}

fn common_checks(n: usize, reps: usize, grid: usize, xi: (f64, f64)) -> Result<()> {
    if n < 2 || reps == 0 || grid < 4 {
        return Err(Error::Config("need n ≥ 2, replicates ≥ 1 and grid_points ≥ 4".into()));
    }
    if !(xi.0 > 0.0 && xi.1 > xi.0 && xi.1.is_finite()) {
        return Err(Error::Config(format!("xi range ({}, {}) must satisfy 0 < lo < hi", xi.0, xi.1)));
    }
    Ok(())
}

/// Either simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub enum SetupConfig {
    One(Setup1Config),
    Two(Setup2Config),
}

impl SetupConfig {
    fn validate(&self) -> Result<()> {
        match self {
            Self::One(c) => c.validate(),
            Self::Two(c) => c.validate(),
        }
    }

    fn n_replicates(&self) -> usize {
        match self {
            Self::One(c) => c.n_replicates,
            Self::Two(c) => c.n_replicates,
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Self::One(c) => c.seed,
            Self::Two(c) => c.seed,
        }
    }

    fn generate(&self, replicate: usize) -> Result<SimulatedSeries> {
        match self {
            Self::One(c) => gen_setup1_replicate(c, replicate),
            Self::Two(c) => gen_setup2_replicate(c, replicate),
        }
    }
}

/// Output of a generator.
#[derive(Debug, Clone)]
pub struct SimulatedSeries {
    pub curves: Vec<Curve>,
    /// Prototype index of each warp (setup 1 only).
    pub phase_states: Option<StateChain>,
    pub warps: Vec<WarpingFunction>,
    pub amplitudes: Vec<Curve>,
    /// The fixed prototypes (setup 1 only).
    pub prototypes: Vec<WarpingFunction>,
}

/// Cumulative-normalised B-spline coefficients `(0, φ₂, …, φ₆, 1)` from six
/// increments drawn uniformly from `xi_range`.
pub fn random_warp_coefficients(rng: &mut impl Rng, xi_range: (f64, f64)) -> Vec<f64> {
    let xi: Vec<f64> = (0..N_BASIS - 1).map(|_| rng.random_range(xi_range.0..xi_range.1)).collect();
    let total: f64 = xi.iter().sum();
    let mut coefs = Vec::with_capacity(N_BASIS);
    coefs.push(0.0);
    let mut acc = 0.0;
    for x in &xi[..N_BASIS - 2] {
        acc += x;
        coefs.push(acc / total);
    }
    coefs.push(1.0);
    coefs
}

/// Warp from the seven-function cubic B-spline basis with increasing
/// coefficients.
pub fn warp_from_coefficients(coefs: &[f64], grid: Grid) -> Result<WarpingFunction> {
    let basis = BSplineBasis::cubic(N_BASIS)?;
    Ok(WarpingFunction::clamped(bspline_expand(&basis, coefs, grid)?))
}

pub fn gen_random_warp(rng: &mut impl Rng, grid: Grid, xi_range: (f64, f64)) -> Result<WarpingFunction> {
    warp_from_coefficients(&random_warp_coefficients(rng, xi_range), grid)
}

/// Sample a chain started from the uniform law.
pub fn gen_markov_states(p: &TransitionMatrix, n: usize, seed: u64) -> Result<StateChain> {
    let mut rng = restart_rng(seed, 0);
    markov_states(p, n, &mut rng)
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &w) in row.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&w| w > 0.0).unwrap_or(row.len() - 1)
}

fn markov_states(p: &TransitionMatrix, n: usize, rng: &mut impl Rng) -> Result<StateChain> {
    let k = p.n_states();
    let mut labels = Vec::with_capacity(n);
    if n > 0 {
        labels.push(rng.random_range(0..k));
    }
    for t in 1..n {
        labels.push(sample_row(&p.row(labels[t - 1]), rng));
    }
    StateChain::new(labels, k)
}

/// `p` on the diagonal, `(1 − p)/3` elsewhere.
pub fn setup1_transition(p_diag: f64) -> Result<TransitionMatrix> {
    let off = (1.0 - p_diag) / 3.0;
    TransitionMatrix::new(DMatrix::from_fn(4, 4, |i, j| if i == j { p_diag } else { off }))
}

/// `R(θ) diag(λ₁, 0.9λ₁) R(θ)'`.
pub fn var_coefficient(lambda1: f64, angle_deg: f64) -> DMatrix<f64> {
    let t = angle_deg.to_radians();
    let r = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![lambda1, 0.9 * lambda1]));
    &r * d * r.transpose()
}

/// Two-peak amplitudes whose pronounced scores (basis 3 and 5, centred at 4
/// and 6) follow a VAR(1) with coefficient `phis[regime[n]]` on the step
/// `n → n+1`.
fn gen_amplitudes(
    regimes: &[usize],
    phis: &[DMatrix<f64>],
    cfg: &AmplitudeConfig,
    grid: Grid,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Curve>> {
    let n = regimes.len();
    let basis = BSplineBasis::cubic(N_BASIS)?;
    let innov = Normal::new(0.0, INNOVATION_VAR.sqrt()).expect("finite sd");
    let minor = Normal::new(1.0, cfg.spread_reading.sd(cfg.minor_spread))
        .map_err(|e| Error::Config(format!("minor score spread: {e}")))?;
    let mut z = DVector::zeros(2);
    // Burn in with random regimes.
    for _ in 0..BURN_IN {
        let k = rng.random_range(0..phis.len());
        z = &phis[k] * z + DVector::from_fn(2, |_, _| innov.sample(rng));
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut coefs: Vec<f64> = (0..N_BASIS).map(|_| minor.sample(rng)).collect();
        coefs[2] = 4.0 + z[0];
        coefs[4] = 6.0 + z[1];
        out.push(bspline_expand(&basis, &coefs, grid)?);
        z = &phis[regimes[t]] * z + DVector::from_fn(2, |_, _| innov.sample(rng));
    }
    Ok(out)
}

fn sup_distance(a: &WarpingFunction, b: &WarpingFunction) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn gen_prototypes(grid: Grid, rng: &mut impl Rng, xi_range: (f64, f64)) -> Result<Vec<WarpingFunction>> {
    let mut protos: Vec<WarpingFunction> = Vec::with_capacity(4);
    let mut attempts = 0;
    while protos.len() < 4 {
        attempts += 1;
        let w = gen_random_warp(rng, grid, xi_range)?;
        if protos.iter().all(|p| sup_distance(p, &w) >= PROTOTYPE_MIN_SEP) || attempts > 10_000 {
            protos.push(w);
        }
    }
    Ok(protos)
}

pub fn gen_setup1(config: &Setup1Config) -> Result<SimulatedSeries> {
    gen_setup1_replicate(config, 0)
}

/// Replicate `r` draws from stream `r` of the configured seed.
pub fn gen_setup1_replicate(config: &Setup1Config, replicate: usize) -> Result<SimulatedSeries> {
    config.validate()?;
    let grid = Grid::new(config.grid_points)?;
    let mut rng = restart_rng(config.seed, replicate as u64);
    let prototypes = gen_prototypes(grid, &mut rng, config.xi_range)?;
    let states = markov_states(&setup1_transition(config.p_diag)?, config.n, &mut rng)?;
    let tau = config.tau;
    let warps: Vec<WarpingFunction> = states
        .labels()
        .iter()
        .map(|&c| {
            let e = gen_random_warp(&mut rng, grid, config.xi_range)?;
            WarpingFunction::convex_combination(&[prototypes[c].clone(), e], &[1.0 - tau, tau])
        })
        .collect::<Result<_>>()?;
    let phis: Vec<DMatrix<f64>> = STATE_ANGLES.iter().map(|&a| var_coefficient(config.lambda1, a)).collect();
    let amplitudes = gen_amplitudes(states.labels(), &phis, &config.amplitude(), grid, &mut rng)?;
    let curves = compose_all(&amplitudes, &warps)?;
    Ok(SimulatedSeries { curves, phase_states: Some(states), warps, amplitudes, prototypes })
}

pub fn gen_setup2(config: &Setup2Config) -> Result<SimulatedSeries> {
    gen_setup2_replicate(config, 0)
}

pub fn gen_setup2_replicate(config: &Setup2Config, replicate: usize) -> Result<SimulatedSeries> {
    config.validate()?;
    let grid = Grid::new(config.grid_points)?;
    let mut rng = restart_rng(config.seed, replicate as u64);
    let beta = config.beta;
    let mut warps = Vec::with_capacity(config.n);
    warps.push(WarpingFunction::identity(grid));
    for t in 1..config.n {
        let e = gen_random_warp(&mut rng, grid, config.xi_range)?;
        let next = WarpingFunction::convex_combination(&[warps[t - 1].clone(), e], &[beta, 1.0 - beta])?;
        warps.push(next);
    }
    let phis = vec![var_coefficient(config.lambda1, 0.0)];
    let amplitudes = gen_amplitudes(&vec![0; config.n], &phis, &config.amplitude(), grid, &mut rng)?;
    let curves = compose_all(&amplitudes, &warps)?;
    Ok(SimulatedSeries { curves, phase_states: None, warps, amplitudes, prototypes: Vec::new() })
}

fn compose_all(amplitudes: &[Curve], warps: &[WarpingFunction]) -> Result<Vec<Curve>> {
    amplitudes.iter().zip(warps).map(|(a, w)| compose(a, w)).collect()
}

/// Fraction of each series used for fitting.
pub const TRAIN_FRACTION: f64 = 0.9;

/// Per-method errors of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: Method,
    pub summary: ErrorSummary,
}

/// One table row: a method's errors pooled over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub setup: String,
    pub params: Vec<(String, String)>,
    pub method: Method,
    pub l2_mean: f64,
    pub l2_sd: f64,
    pub fr_mean: f64,
    pub fr_sd: f64,
}

impl ExperimentRow {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["setup".to_string()];
        cols.extend(self.params.iter().map(|(k, _)| k.clone()));
        cols.extend(["method", "l2_mean", "l2_sd", "fr_mean", "fr_sd"].map(String::from));
        cols.join(",")
    }

    pub fn csv_line(&self) -> String {
        let mut cols = vec![self.setup.clone()];
        cols.extend(self.params.iter().map(|(_, v)| v.clone()));
        cols.push(self.method.to_string());
        for v in [self.l2_mean, self.l2_sd, self.fr_mean, self.fr_sd] {
            cols.push(format!("{v:.6}"));
        }
        cols.join(",")
    }

    /// `mean(sd)` cells in table order l2, FR.
    pub fn table_cells(&self) -> (String, String) {
        (
            format!("{:.3}({:.3})", self.l2_mean, self.l2_sd),
            format!("{:.3}({:.3})", self.fr_mean, self.fr_sd),
        )
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ExperimentRow>,
    pub replicates: Vec<ReplicateResult>,
}

fn setup_params(setup: &SetupConfig) -> (String, Vec<(String, String)>) {
    match setup {
        SetupConfig::One(c) => (
            "1".into(),
            vec![
                ("n".into(), c.n.to_string()),
                ("tau".into(), c.tau.to_string()),
                ("p".into(), c.p_diag.to_string()),
                ("lambda1".into(), c.lambda1.to_string()),
            ],
        ),
        SetupConfig::Two(c) => (
            "2".into(),
            vec![
                ("n".into(), c.n.to_string()),
                ("beta".into(), c.beta.to_string()),
                ("lambda1".into(), c.lambda1.to_string()),
            ],
        ),
    }
}

/// Per replicate: fit on the first 90% and forecast the last 10% one step at
/// a time with the realised history; pool the per-curve errors over
/// replicates into `mean(sd)` rows.
pub fn run_experiment(setup: &SetupConfig, methods: &[Method], sp: &SpModelConfig) -> Result<ExperimentOutput> {
    setup.validate()?;
    let reps = setup.n_replicates();
    let per_rep: Vec<Vec<(Method, Vec<(f64, f64)>)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = setup.generate(r)?;
            let n_train = ((TRAIN_FRACTION * data.curves.len() as f64).round() as usize).clamp(1, data.curves.len() - 1);
            let cfg = SpModelConfig { seed: sp.seed.wrapping_add(setup.seed()).wrapping_add(r as u64), ..sp.clone() };
            methods
                .iter()
                .map(|&m| Ok((m, holdout_errors(&data.curves, n_train, m, &cfg)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let (setup_name, params) = setup_params(setup);
    let mut rows = Vec::new();
    let mut replicates = Vec::new();
    for &m in methods {
        let mut pooled = Vec::new();
        for (r, rep) in per_rep.iter().enumerate() {
            for (mm, errs) in rep {
                if *mm == m {
                    pooled.extend_from_slice(errs);
                    replicates.push(ReplicateResult { replicate: r, method: m, summary: ErrorSummary::from_pairs(errs, 0) });
                }
            }
        }
        let s = ErrorSummary::from_pairs(&pooled, 0);
        rows.push(ExperimentRow {
            setup: setup_name.clone(),
            params: params.clone(),
            method: m,
            l2_mean: s.l2_mean,
            l2_sd: s.l2_sd,
            fr_mean: s.fr_mean,
            fr_sd: s.fr_sd,
        });
    }
    Ok(ExperimentOutput { rows, replicates })
}
