//! Hidden-state machinery for phase: clustering, state chains, transition
//! estimation and warp prediction.
//!
//! State labels are 0-based throughout (`0..k`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curves::{Curve, Grid};
use crate::error::{Error, Result};
use crate::registration::warp::{srsf_of_warping, warping_of_srsf, Srsf, SrsfKind, WarpingFunction};

const LLOYD_MAX_ITER: usize = 200;

/// Default number of seeded restarts for the clustering routines.
pub const DEFAULT_RESTARTS: usize = 10;

/// A hidden-state sequence with `k` possible states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateChain {
    labels: Vec<usize>,
    k: usize,
}

impl StateChain {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("a state chain needs at least one state"));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(Error::input(format!("label {bad} out of range for {k} states")));
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_states(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot row `ω_n`.
    pub fn indicator(&self, n: usize) -> Vec<f64> {
        one_hot(self.labels[n], self.k)
    }

    /// All indicators stacked as an `N × k` matrix.
    pub fn indicators(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.k, |n, j| if self.labels[n] == j { 1.0 } else { 0.0 })
    }
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

/// Combined chain with indicator `ω^{(f)} ⊗ ω^{(a)}`: label `phase·l + amp`.
pub fn combine_states(phase: &StateChain, amp: &StateChain) -> Result<StateChain> {
    if phase.len() != amp.len() {
        return Err(Error::dim(format!(
            "phase chain has {} entries, amplitude chain {}",
            phase.len(),
            amp.len()
        )));
    }
    let l = amp.n_states();
    let labels = phase
        .labels
        .iter()
        .zip(&amp.labels)
        .map(|(&f, &a)| f * l + a)
        .collect();
    StateChain::new(labels, phase.n_states() * l)
}

/// Row-stochastic square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Validates squareness, entries in `[0,1]` and unit row sums within 1e-10.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::dim("transition matrix must be square and non-empty"));
        }
        for (i, row) in entries.row_iter().enumerate() {
            if row.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
                return Err(Error::input(format!("row {i} has entries outside [0,1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::input(format!("row {i} sums to {}", row.sum())));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("transition rows must all have length k"));
        }
        Self::new(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }

    pub fn identity(k: usize) -> Self {
        Self { entries: DMatrix::identity(k, k) }
    }

    pub fn uniform(k: usize) -> Self {
        Self { entries: DMatrix::from_element(k, k, 1.0 / k as f64) }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n_states(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.entries.row(i).iter().copied().collect()
    }

    /// Row vector times matrix: `v P`.
    pub fn propagate(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_states() {
            return Err(Error::dim(format!(
                "distribution of length {} for {} states",
                v.len(),
                self.n_states()
            )));
        }
        let row = DVector::from_column_slice(v).transpose() * &self.entries;
        Ok(row.iter().copied().collect())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> Result<f64> {
        if self.n_states() != other.n_states() {
            return Err(Error::dim("transition matrices differ in size"));
        }
        Ok((&self.entries - &other.entries).amax())
    }
}

/// Least-squares transition estimate `argmin_P Σ ‖ω_n − ω_{n−1}P‖²`.
///
/// With one-hot indicators this is the row-normalized one-step count
/// matrix; rows of states never seen at indices `0..N−1` are uniform.
pub fn ls_transition(chain: &StateChain) -> Result<TransitionMatrix> {
    if chain.len() < 2 {
        return Err(Error::input("transition estimation needs at least 2 states"));
    }
    let k = chain.n_states();
    let mut counts = DMatrix::<f64>::zeros(k, k);
    for w in chain.labels.windows(2) {
        counts[(w[0], w[1])] += 1.0;
    }
    for i in 0..k {
        let total: f64 = counts.row(i).sum();
        if total > 0.0 {
            counts.row_mut(i).iter_mut().for_each(|x| *x /= total);
        } else {
            counts.row_mut(i).fill(1.0 / k as f64);
        }
    }
    Ok(TransitionMatrix { entries: counts })
}

/// Euclidean projection of one vector onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Remove the rounding residue so rows sum to 1 within 1e-10.
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    out
}

/// Frobenius-nearest stochastic matrix, computed row by row.
pub fn project_stochastic(m: &DMatrix<f64>) -> Result<TransitionMatrix> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::dim("projection needs a non-empty square matrix"));
    }
    let k = m.nrows();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, x) in project_simplex(&row).into_iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    Ok(TransitionMatrix { entries: out })
}

/// Predicted phase-state distribution `ω_N P J`, where `J` sums the `l`
/// amplitude states inside each phase block.
pub fn predict_warp_indicator(
    omega: &[f64],
    transition: &TransitionMatrix,
    g: usize,
    l: usize,
) -> Result<Vec<f64>> {
    if g * l != transition.n_states() {
        return Err(Error::dim(format!(
            "{}-state transition for g={g}, l={l}",
            transition.n_states()
        )));
    }
    let dist = transition.propagate(omega)?;
    Ok((0..g).map(|j| dist[j * l..(j + 1) * l].iter().sum()).collect())
}

/// Prototype warps `b̂_j` and their SRSF centroids `p̂_j`.
#[derive(Debug, Clone)]
pub struct Prototypes {
    centroid_srsfs: Vec<Srsf>,
    warpings: Vec<WarpingFunction>,
}

impl Prototypes {
    pub fn from_centroids(centroid_srsfs: Vec<Srsf>) -> Result<Self> {
        if centroid_srsfs.is_empty() {
            return Err(Error::input("at least one prototype required"));
        }
        let warpings = centroid_srsfs
            .iter()
            .map(warping_of_srsf)
            .collect::<Result<_>>()?;
        Ok(Self { centroid_srsfs, warpings })
    }

    pub fn from_warpings(warpings: Vec<WarpingFunction>) -> Result<Self> {
        if warpings.is_empty() {
            return Err(Error::input("at least one prototype required"));
        }
        let centroid_srsfs = warpings
            .iter()
            .map(|w| srsf_of_warping(w).map(|s| s.normalized()))
            .collect::<Result<_>>()?;
        Ok(Self { centroid_srsfs, warpings })
    }

    pub fn centroid_srsfs(&self) -> &[Srsf] {
        &self.centroid_srsfs
    }

    pub fn warpings(&self) -> &[WarpingFunction] {
        &self.warpings
    }

    pub fn g(&self) -> usize {
        self.warpings.len()
    }

    /// Nearest prototype by SRSF cosine; ties go to the lowest index.
    pub fn classify(&self, warp: &WarpingFunction) -> Result<usize> {
        let s = srsf_of_warping(warp)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (j, p) in self.centroid_srsfs.iter().enumerate() {
            let c = s.cosine(p)?;
            if c > best.1 {
                best = (j, c);
            }
        }
        Ok(best.0)
    }

    /// State weights `∝ 1/(1 − cos(S(γ), p̂_k))`, cosine clipped at `1 − 1e-9`.
    pub fn weights(&self, warp: &WarpingFunction) -> Result<Vec<f64>> {
        let s = srsf_of_warping(warp)?;
        let raw: Vec<f64> = self
            .centroid_srsfs
            .iter()
            .map(|p| s.cosine(p).map(|c| 1.0 / (1.0 - c.min(1.0 - 1e-9))))
            .collect::<Result<_>>()?;
        let total: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

/// How a predicted phase distribution becomes a warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WarpMode {
    /// Argmax prototype, lowest index on ties.
    Hard,
    /// Convex combination of prototypes.
    #[default]
    Soft,
}

/// `γ̂ = Σ_j w_j b̂_j` (soft) or the argmax prototype (hard).
pub fn predict_warping(
    indicator: &[f64],
    prototypes: &Prototypes,
    mode: WarpMode,
) -> Result<WarpingFunction> {
    if indicator.len() != prototypes.g() {
        return Err(Error::dim(format!(
            "indicator of length {} for {} prototypes",
            indicator.len(),
            prototypes.g()
        )));
    }
    if indicator.iter().any(|&w| w < -1e-12) || (indicator.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
        return Err(Error::input("indicator must be a probability vector"));
    }
    match mode {
        WarpMode::Soft => WarpingFunction::convex_combination(prototypes.warpings(), indicator),
        WarpMode::Hard => Ok(prototypes.warpings()[argmax(indicator)].clone()),
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stream-split RNG: restart `r` of a run seeded by `seed`.
pub(crate) fn restart_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw an index with probability proportional to `w`; uniform if all zero.
fn weighted_pick(w: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..w.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone)]
struct ClusterRun {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
    /// Objective after each iteration; tests check it never increases.
    #[cfg_attr(not(test), allow(dead_code))]
    history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Generic Lloyd iteration. `dissim` must be the quantity whose sum is the
/// objective; `centre` maps a cluster's members to its centroid.
fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
    dissim: impl Fn(&[f64], &[f64]) -> f64,
    centre: impl Fn(&[&Vec<f64>]) -> Vec<f64>,
) -> ClusterRun {
    let n = points.len();
    // k-means++ style seeding.
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dissim(p, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = weighted_pick(&nearest, rng);
        let c = points[pick].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dissim(p, &c));
        }
        centroids.push(c);
    }
    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let labels = points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in centroids.iter().enumerate() {
                    let d = dissim(p, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                total += best.1;
                best.0
            })
            .collect();
        (labels, total)
    };
    let (mut labels, mut objective) = assign(&centroids);
    let mut history = vec![objective];
    for _ in 0..LLOYD_MAX_ITER {
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &c)| c == j)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                next.push(centroids[j].clone());
            } else {
                next.push(centre(&members));
            }
        }
        // Reseed empty clusters with the worst-fit point.
        for j in 0..k {
            if labels.iter().all(|&c| c != j) {
                let worst = (0..n)
                    .max_by(|&a, &b| {
                        dissim(&points[a], &next[labels[a]])
                            .total_cmp(&dissim(&points[b], &next[labels[b]]))
                    })
                    .unwrap_or(0);
                next[j] = points[worst].clone();
            }
        }
        let (new_labels, new_obj) = assign(&next);
        if new_obj > objective + 1e-12 * objective.abs().max(1.0) {
            break;
        }
        let same = new_labels == labels;
        centroids = next;
        labels = new_labels;
        objective = new_obj;
        history.push(objective);
        if same {
            break;
        }
    }
    ClusterRun { labels, centroids, objective, history }
}

fn best_of_restarts(
    restarts: usize,
    seed: u64,
    run: impl Fn(&mut ChaCha8Rng) -> ClusterRun + Sync,
) -> ClusterRun {
    let runs: Vec<ClusterRun> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| run(&mut restart_rng(seed, r)))
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective < runs[best].objective {
            best = i;
        }
    }
    runs.into_iter().nth(best).expect("at least one restart")
}

/// SRSFs as vectors whose Euclidean products equal L² products on the grid.
fn weighted_vectors(srsfs: &[Srsf]) -> Result<(Grid, Vec<f64>, Vec<Vec<f64>>)> {
    let grid = srsfs[0].curve().grid();
    let root_w: Vec<f64> = grid.weights().into_iter().map(f64::sqrt).collect();
    let vecs = srsfs
        .iter()
        .map(|s| {
            if s.curve().grid() != grid {
                return Err(Error::dim("SRSFs live on different grids"));
            }
            let mut v: Vec<f64> = s.curve().values().iter().zip(&root_w).map(|(x, w)| x * w).collect();
            normalize(&mut v);
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok((grid, root_w, vecs))
}

fn spherical_run(points: &[Vec<f64>], g: usize, rng: &mut ChaCha8Rng) -> ClusterRun {
    lloyd(
        points,
        g,
        rng,
        |a, b| (1.0 - dot(a, b)).max(0.0),
        |members| {
            let mut c = vec![0.0; members[0].len()];
            for m in members {
                c.iter_mut().zip(m.iter()).for_each(|(a, b)| *a += b);
            }
            normalize(&mut c);
            c
        },
    )
}

/// Spherical k-means on warp SRSFs minimising `D = Σ (1 − ⟨s_n, p_{c_n}⟩)`.
///
/// Returns the prototypes (unit-norm centroids and their warps) and labels.
pub fn spherical_kmeans(
    srsfs: &[Srsf],
    g: usize,
    seed: u64,
    restarts: usize,
) -> Result<(Prototypes, StateChain)> {
    let (prototypes, chain, _) = spherical_kmeans_with_objective(srsfs, g, seed, restarts)?;
    Ok((prototypes, chain))
}

/// As [`spherical_kmeans`], also returning the attained objective `D`.
pub fn spherical_kmeans_with_objective(
    srsfs: &[Srsf],
    g: usize,
    seed: u64,
    restarts: usize,
) -> Result<(Prototypes, StateChain, f64)> {
    if srsfs.is_empty() {
        return Err(Error::input("spherical k-means on an empty sample"));
    }
    if g == 0 || g > srsfs.len() {
        return Err(Error::input(format!("g = {g} for {} observations", srsfs.len())));
    }
    let (grid, root_w, points) = weighted_vectors(srsfs)?;
    let best = best_of_restarts(restarts, seed, |rng| spherical_run(&points, g, rng));
    let centroids = best
        .centroids
        .iter()
        .map(|c| {
            let values = c.iter().zip(&root_w).map(|(x, w)| if *w > 0.0 { x / w } else { 0.0 }).collect();
            Srsf::new(Curve::from_raw(grid, values), SrsfKind::Warp).normalized()
        })
        .collect();
    Ok((
        Prototypes::from_centroids(centroids)?,
        StateChain::new(best.labels, g)?,
        best.objective,
    ))
}

/// Euclidean k-means with k-means++ seeding, best of `restarts` by
/// within-cluster sum of squares.
pub fn kmeans_scores(vectors: &[Vec<f64>], l: usize, seed: u64, restarts: usize) -> Result<StateChain> {
    kmeans_scores_with_objective(vectors, l, seed, restarts).map(|(c, _)| c)
}

pub fn kmeans_scores_with_objective(
    vectors: &[Vec<f64>],
    l: usize,
    seed: u64,
    restarts: usize,
) -> Result<(StateChain, f64)> {
    if vectors.is_empty() {
        return Err(Error::input("k-means on an empty sample"));
    }
    if l == 0 || l > vectors.len() {
        return Err(Error::input(format!("l = {l} for {} observations", vectors.len())));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::dim("score vectors differ in length"));
    }
    let best = best_of_restarts(restarts, seed, |rng| {
        lloyd(vectors, l, rng, sq_dist, |members| {
            let mut c = vec![0.0; d];
            for m in members {
                c.iter_mut().zip(m.iter()).for_each(|(a, b)| *a += b);
            }
            let n = members.len() as f64;
            c.iter_mut().for_each(|a| *a /= n);
            c
        })
    });
    Ok((StateChain::new(best.labels, l)?, best.objective))
}

/// Inputs for the misclassification oracle.
#[derive(Debug, Clone)]
pub struct MisclassOracleInput {
    /// Transition law of the true combined chain (`g·l` states).
    pub true_transition: TransitionMatrix,
    /// `confusion_phase[(i, j)] = P(ĉ^{(f)} = j | c^{(f)} = i)`.
    pub confusion_phase: DMatrix<f64>,
    /// `confusion_amp[(i, j)] = P(ĉ^{(a)} = j | c^{(a)} = i)`.
    pub confusion_amp: DMatrix<f64>,
    /// Stationary law of the true combined chain.
    pub joint_stationary: Vec<f64>,
}

impl MisclassOracleInput {
    /// Build with the stationary law computed from the transition matrix.
    pub fn new(
        true_transition: TransitionMatrix,
        confusion_phase: DMatrix<f64>,
        confusion_amp: DMatrix<f64>,
    ) -> Result<Self> {
        let joint_stationary = stationary_distribution(&true_transition)?;
        let input = Self { true_transition, confusion_phase, confusion_amp, joint_stationary };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.confusion_phase.nrows();
        let l = self.confusion_amp.nrows();
        if !self.confusion_phase.is_square() || !self.confusion_amp.is_square() {
            return Err(Error::dim("confusion matrices must be square"));
        }
        if g * l != self.true_transition.n_states() || self.joint_stationary.len() != g * l {
            return Err(Error::dim("oracle inputs disagree on the number of combined states"));
        }
        for m in [&self.confusion_phase, &self.confusion_amp] {
            TransitionMatrix::new(m.clone())?;
        }
        let pi = &self.joint_stationary;
        if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-8 || pi.iter().any(|&x| x < -1e-12) {
            return Err(Error::input("stationary vector is not a probability vector"));
        }
        let moved = self.true_transition.propagate(pi)?;
        if moved.iter().zip(pi).any(|(a, b)| (a - b).abs() > 1e-8) {
            return Err(Error::input("stationary vector does not satisfy πP = π"));
        }
        Ok(())
    }

    fn confusion(&self, truth: usize, est: usize) -> f64 {
        let l = self.confusion_amp.nrows();
        self.confusion_phase[(truth / l, est / l)] * self.confusion_amp[(truth % l, est % l)]
    }
}

/// Stationary law `π = πP` by a least-squares solve with `Σπ = 1`.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let k = p.n_states();
    let mut a = DMatrix::<f64>::zeros(k + 1, k);
    let pt = p.entries().transpose();
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = pt[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        a[(k, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k + 1);
    b[k] = 1.0;
    let pi = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Fit(format!("stationary solve failed: {e}")))?;
    let mut v: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    Ok(v)
}

/// Transition law of the estimated chain under misclassification:
///
/// `P̃(ê'|ê) = Σ_{x,x'} P(x'|x) C(ê'|x') C(ê|x) π(x) / Σ_x C(ê|x) π(x)`.
pub fn oracle_estimated_transition(input: &MisclassOracleInput) -> Result<TransitionMatrix> {
    input.validate()?;
    let k = input.true_transition.n_states();
    let p = input.true_transition.entries();
    let pi = &input.joint_stationary;
    let mut out = DMatrix::<f64>::zeros(k, k);
    for e in 0..k {
        let marginal: f64 = (0..k).map(|x| input.confusion(x, e) * pi[x]).sum();
        if marginal <= 0.0 {
            return Err(Error::DegenerateOracle(format!(
                "estimated state {e} has zero probability"
            )));
        }
        for e2 in 0..k {
            let mut acc = 0.0;
            for x in 0..k {
                let post = input.confusion(x, e) * pi[x];
                if post == 0.0 {
                    continue;
                }
                for x2 in 0..k {
                    acc += p[(x, x2)] * input.confusion(x2, e2) * post;
                }
            }
            out[(e, e2)] = acc / marginal;
        }
    }
    TransitionMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(labels: &[usize], k: usize) -> StateChain {
        StateChain::new(labels.to_vec(), k).unwrap()
    }

    #[test]
    fn kronecker_combination() {
        let phase = chain(&[1], 2);
        let amp = chain(&[0], 2);
        let c = combine_states(&phase, &amp).unwrap();
        assert_eq!(c.indicator(0), vec![0.0, 0.0, 1.0, 0.0]);
        let p = chain(&[0, 2, 1], 3);
        assert_eq!(combine_states(&p, &chain(&[0, 0, 0], 1)).unwrap(), p);
        let a = chain(&[1, 0, 1], 2);
        assert_eq!(combine_states(&chain(&[0, 0, 0], 1), &a).unwrap(), a);
        assert!(combine_states(&p, &a.clone()).is_ok());
        assert!(combine_states(&p, &chain(&[0, 1], 2)).is_err());
    }

    #[test]
    fn indicators_are_one_hot() {
        let c = chain(&[0, 2, 1, 2], 3);
        let m = c.indicators();
        for (n, row) in m.row_iter().enumerate() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row[c.labels()[n]], 1.0);
        }
    }

    #[test]
    fn ls_transition_hand_count() {
        // Labels (1,1,2,1,2,2) in 1-based notation.
        let p = ls_transition(&chain(&[0, 0, 1, 0, 1, 1], 2)).unwrap();
        let want = [[1.0 / 3.0, 2.0 / 3.0], [0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.get(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
        // The normal equations (ΩᵀΩ) P = Ωᵀ Ω' give the same matrix.
        let c = chain(&[0, 0, 1, 0, 1, 1], 2);
        let ind = c.indicators();
        let prev = ind.rows(0, 5).into_owned();
        let next = ind.rows(1, 5).into_owned();
        let lhs = prev.transpose() * &prev;
        let rhs = prev.transpose() * &next;
        let sol = lhs.lu().solve(&rhs).unwrap();
        assert!((sol - p.entries()).amax() < 1e-12);
    }

    #[test]
    fn ls_transition_cycle_and_unvisited() {
        let p = ls_transition(&chain(&[0, 1, 0, 1, 0, 1], 2)).unwrap();
        assert_eq!(p.entries(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let p = ls_transition(&chain(&[0, 0, 0], 3)).unwrap();
        assert_eq!(p.row(1), vec![1.0 / 3.0; 3]);
        assert!(ls_transition(&chain(&[0], 1)).is_err());
    }

    #[test]
    fn ls_transition_iid_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..20000).map(|_| rng.random_range(0..4)).collect();
        let p = ls_transition(&chain(&labels, 4)).unwrap();
        assert!(p.max_abs_diff(&TransitionMatrix::uniform(4)).unwrap() < 0.02);
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.6, 0.6]), vec![0.5, 0.5]);
        let p = project_simplex(&[1.2, -0.1]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        // Brute-force grid search over the 1-simplex at step 1e-4.
        let target = [1.2, -0.1];
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=10000 {
            let a = i as f64 * 1e-4;
            let d = (a - target[0]).powi(2) + (1.0 - a - target[1]).powi(2);
            if d < best.1 {
                best = (a, d);
            }
        }
        assert!((p[0] - best.0).abs() <= 1e-4);
    }

    #[test]
    fn projection_of_stochastic_is_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.9, 0.1]);
        let p = project_stochastic(&m).unwrap();
        assert!((p.entries() - &m).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            vals in proptest::collection::vec(-2.0f64..2.0, 9),
            stoch in proptest::collection::vec(0.0f64..1.0, 9),
        ) {
            let m = DMatrix::from_row_slice(3, 3, &vals);
            let p = project_stochastic(&m).unwrap();
            let pp = project_stochastic(p.entries()).unwrap();
            prop_assert!((p.entries() - pp.entries()).amax() < 1e-12);
            // Any stochastic S: ‖proj(M) − S‖ ≤ ‖M − S‖.
            let mut s = DMatrix::from_row_slice(3, 3, &stoch);
            for mut row in s.row_iter_mut() {
                let t = row.sum().max(1e-9);
                row.iter_mut().for_each(|x| *x /= t);
            }
            prop_assert!((p.entries() - &s).norm() <= (&m - &s).norm() + 1e-12);
        }

        #[test]
        fn ls_transition_matches_counts(labels in proptest::collection::vec(0usize..3, 2..60)) {
            let c = StateChain::new(labels.clone(), 3).unwrap();
            let p = ls_transition(&c).unwrap();
            for i in 0..3 {
                let from: Vec<usize> = labels.windows(2).filter(|w| w[0] == i).map(|w| w[1]).collect();
                for j in 0..3 {
                    let want = if from.is_empty() {
                        1.0 / 3.0
                    } else {
                        from.iter().filter(|&&x| x == j).count() as f64 / from.len() as f64
                    };
                    prop_assert!((p.get(i, j) - want).abs() < 1e-15);
                }
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn predicted_indicator_is_probability(
            vals in proptest::collection::vec(0.0f64..1.0, 16),
            state in 0usize..4,
        ) {
            let p = project_stochastic(&DMatrix::from_row_slice(4, 4, &vals)).unwrap();
            let w = predict_warp_indicator(&one_hot(state, 4), &p, 2, 2).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn warp_indicator_examples() {
        let w = predict_warp_indicator(&one_hot(0, 4), &TransitionMatrix::identity(4), 2, 2).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let w = predict_warp_indicator(&one_hot(2, 6), &TransitionMatrix::uniform(6), 3, 2).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let mut rows = vec![vec![0.25; 4]; 4];
        rows[0] = vec![0.1, 0.2, 0.3, 0.4];
        let p = TransitionMatrix::from_rows(&rows).unwrap();
        let w = predict_warp_indicator(&one_hot(0, 4), &p, 2, 2).unwrap();
        assert!((w[0] - 0.3).abs() < 1e-12 && (w[1] - 0.7).abs() < 1e-12);
        assert!(predict_warp_indicator(&one_hot(0, 4), &p, 3, 2).is_err());
    }

    fn power_warp(g: Grid, a: f64) -> WarpingFunction {
        WarpingFunction::new(Curve::from_fn(g, |x| x.powf(a))).unwrap()
    }

    #[test]
    fn warp_prediction_modes() {
        let g = Grid::new(101).unwrap();
        let protos = Prototypes::from_warpings(vec![power_warp(g, 0.7), power_warp(g, 1.5)]).unwrap();
        let w = predict_warping(&[0.0, 1.0], &protos, WarpMode::Soft).unwrap();
        assert_eq!(w.values(), protos.warpings()[1].values());
        let w = predict_warping(&[0.5, 0.5], &protos, WarpMode::Hard).unwrap();
        assert_eq!(w.values(), protos.warpings()[0].values());
        let w = predict_warping(&[0.5, 0.5], &protos, WarpMode::Soft).unwrap();
        assert!(w.values().windows(2).all(|p| p[1] >= p[0]));
        assert_eq!(w.values()[0], 0.0);
        assert_eq!(*w.values().last().unwrap(), 1.0);
        let same = Prototypes::from_warpings(vec![power_warp(g, 1.2); 2]).unwrap();
        let w = predict_warping(&[0.3, 0.7], &same, WarpMode::Soft).unwrap();
        assert!(w.curve().sub(same.warpings()[0].curve()).unwrap().sup_norm() < 1e-12);
        assert!(predict_warping(&[0.3, 0.3], &protos, WarpMode::Soft).is_err());
    }

    #[test]
    fn weights_concentrate_on_matching_prototype() {
        let g = Grid::new(101).unwrap();
        let protos = Prototypes::from_warpings(vec![
            power_warp(g, 0.6),
            power_warp(g, 1.0),
            power_warp(g, 1.6),
        ])
        .unwrap();
        let w = protos.weights(&protos.warpings()[2]).unwrap();
        assert!(w[2] >= 0.99, "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(protos.classify(&power_warp(g, 0.65)).unwrap(), 0);
    }

    #[test]
    fn spherical_kmeans_closed_forms() {
        let g = Grid::new(101).unwrap();
        let warps: Vec<WarpingFunction> = [0.6, 0.8, 1.0, 1.3, 1.7].iter().map(|&a| power_warp(g, a)).collect();
        let srsfs: Vec<Srsf> = warps.iter().map(|w| srsf_of_warping(w).unwrap()).collect();
        // g = 1: normalized mean.
        let (protos, chain) = spherical_kmeans(&srsfs, 1, 7, 3).unwrap();
        assert!(chain.labels().iter().all(|&c| c == 0));
        let mut mean = Curve::zeros(g);
        for s in &srsfs {
            mean = mean.add(s.normalized().curve()).unwrap();
        }
        let mean = Srsf::new(mean, SrsfKind::Warp).normalized();
        assert!(protos.centroid_srsfs()[0].curve().sub(mean.curve()).unwrap().sup_norm() < 1e-9);
        assert!((protos.centroid_srsfs()[0].norm() - 1.0).abs() < 1e-6);
        // g = N: zero objective.
        let (_, chain, d) = spherical_kmeans_with_objective(&srsfs, 5, 7, 3).unwrap();
        assert!(d.abs() < 1e-10);
        let mut l = chain.labels().to_vec();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3, 4]);
        assert!(spherical_kmeans(&[], 1, 0, 1).is_err());
        assert!(spherical_kmeans(&srsfs, 6, 0, 1).is_err());
    }

    #[test]
    fn spherical_objective_never_increases() {
        let g = Grid::new(51).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let srsfs: Vec<Srsf> = (0..40)
            .map(|_| srsf_of_warping(&power_warp(g, rng.random_range(0.5..2.0))).unwrap())
            .collect();
        let (_, _, points) = weighted_vectors(&srsfs).unwrap();
        for r in 0..5 {
            let run = spherical_run(&points, 3, &mut restart_rng(1, r));
            assert!(run.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(*run.history.last().unwrap() <= run.history[0]);
        }
    }

    #[test]
    fn kmeans_scores_cases() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let c = kmeans_scores(&pts, 1, 0, 2).unwrap();
        assert!(c.labels().iter().all(|&x| x == 0));
        let dup = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 5.0], vec![5.0, 5.0]];
        let (c, ss) = kmeans_scores_with_objective(&dup, 2, 0, 3).unwrap();
        assert_eq!(ss, 0.0);
        assert_eq!(c.labels()[0], c.labels()[1]);
        assert_ne!(c.labels()[0], c.labels()[2]);
    }

    #[test]
    fn kmeans_scores_separated_blobs() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let truth: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let pts: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| vec![10.0 * t as f64 + nrm.sample(&mut rng), nrm.sample(&mut rng)])
            .collect();
        let c = kmeans_scores(&pts, 2, 9, DEFAULT_RESTARTS).unwrap();
        let agree = c.labels().iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(agree == 200 || agree == 0);
    }

    #[test]
    fn oracle_trivial_cases() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let id = DMatrix::identity(2, 2);
        let one = DMatrix::identity(1, 1);
        let inp = MisclassOracleInput::new(p.clone(), id, one.clone()).unwrap();
        let pt = oracle_estimated_transition(&inp).unwrap();
        assert!(pt.max_abs_diff(&p).unwrap() < 1e-12);
        let inp = MisclassOracleInput::new(p, DMatrix::from_element(2, 2, 0.5), one).unwrap();
        let pt = oracle_estimated_transition(&inp).unwrap();
        assert!(pt.max_abs_diff(&TransitionMatrix::uniform(2)).unwrap() < 1e-12);
    }

    #[test]
    fn oracle_degenerate_marginal() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let inp = MisclassOracleInput::new(p, c, DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(oracle_estimated_transition(&inp), Err(Error::DegenerateOracle(_))));
    }

    #[test]
    fn oracle_matches_noisy_chain_simulation() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let conf = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let inp = MisclassOracleInput::new(p.clone(), conf, DMatrix::identity(1, 1)).unwrap();
        let oracle = oracle_estimated_transition(&inp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 200_000;
        let mut x = 0usize;
        let mut est = Vec::with_capacity(n);
        for _ in 0..n {
            let flip = rng.random::<f64>() < 0.1;
            est.push(if flip { 1 - x } else { x });
            x = if rng.random::<f64>() < p.get(x, 0) { 0 } else { 1 };
        }
        let emp = ls_transition(&StateChain::new(est, 2).unwrap()).unwrap();
        assert!(emp.max_abs_diff(&oracle).unwrap() < 0.01);
    }

    #[test]
    fn stationary_law() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
    }
}
