//! Elastic pairwise alignment by dynamic programming over a lattice.
//!
//! For SRSFs `q1`, `q2` sampled on an `M`-point lattice, the warp is a
//! monotone piecewise-linear path from node `(0,0)` to `(M-1,M-1)` where node
//! `(i,j)` means `γ(tᵢ) = tⱼ`. Each path segment is one of the allowed
//! `(Δi, Δj)` steps, so every local slope `Δj/Δi` comes from a fixed set. The
//! cost of a segment is the trapezoid integral of
//! `(q1(t) − q2(γ(t))·√γ̇)²` over the lattice points it spans, so the total
//! path cost is the squared aligned distance the warp actually attains.

use crate::curves::{interp_uniform, l2_distance, Curve, Grid};
use crate::error::{Error, Result};
use crate::registration::warp::{srsf_of_function, Srsf, WarpingFunction};

/// Local slopes {1/3, 1/2, 1, 2, 3}.
pub const BASIC_STEPS: &[(usize, usize)] = &[(1, 1), (1, 2), (2, 1), (1, 3), (3, 1)];

/// Every coprime step with components ≤ 4 and slope in [1/3, 3], plus the
/// steep steps `(1, k)` and `(k, 1)` for `4 ≤ k ≤ 8`.
///
/// Local slopes range over [1/8, 8]; the dense part in [1/3, 3] keeps
/// smoothly varying warps from zigzagging between distant slopes.
pub const DEFAULT_STEPS: &[(usize, usize)] = &[
    (1, 1),
    (1, 2),
    (2, 1),
    (1, 3),
    (3, 1),
    (2, 3),
    (3, 2),
    (3, 4),
    (4, 3),
    (1, 4),
    (4, 1),
    (1, 5),
    (5, 1),
    (1, 6),
    (6, 1),
    (1, 7),
    (7, 1),
    (1, 8),
    (8, 1),
];

/// Lattice DP configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DpOptions {
    /// Lattice size; `None` uses the curves' own grid.
    pub lattice: Option<usize>,
    /// Allowed `(Δi, Δj)` steps; the first listed wins ties.
    pub steps: Vec<(usize, usize)>,
    /// Polish the lattice path by coordinate descent on its node values,
    /// letting slopes vary continuously within the step-set bounds.
    pub refine: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            lattice: None,
            steps: DEFAULT_STEPS.to_vec(),
            refine: true,
        }
    }
}

impl DpOptions {
    pub fn with_lattice(lattice: usize) -> Self {
        Self {
            lattice: Some(lattice),
            ..Self::default()
        }
    }
}

/// Result of aligning one function to another.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Warp `γ*` applied to the second argument.
    pub warp: WarpingFunction,
    /// Attained distance `‖q1 − (q2∘γ*)√γ̇*‖` on the lattice.
    pub cost: f64,
}

/// Optimal lattice path with its squared cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub nodes: Vec<(usize, usize)>,
    pub objective: f64,
}

/// Squared cost of the straight segment from lattice node `(k,l)` to `(i,j)`.
///
/// `q1`, `q2` are sampled on a fine uniform grid whose cells refine each
/// lattice cell `r` times; the integral runs over the fine samples.
pub fn segment_cost(
    q1: &[f64],
    q2: &[f64],
    r: usize,
    from: (usize, usize),
    to: (usize, usize),
) -> f64 {
    let h = 1.0 / (q1.len() - 1) as f64;
    let (k, l) = (from.0 * r, from.1 * r);
    let (i, j) = (to.0 * r, to.1 * r);
    let slope = (j - l) as f64 / (i - k) as f64;
    let root = slope.sqrt();
    let err = |u: usize| {
        let pos = l as f64 + slope * (u - k) as f64;
        q1[u] - interp_uniform(q2, pos * h) * root
    };
    let mut prev = err(k);
    let mut acc = 0.0;
    for u in k + 1..=i {
        let cur = err(u);
        acc += 0.5 * h * (prev * prev + cur * cur);
        prev = cur;
    }
    acc
}

/// Minimum-cost monotone lattice path for SRSF samples `q1`, `q2`.
pub fn dp_lattice(q1: &[f64], q2: &[f64], steps: &[(usize, usize)]) -> Result<LatticePath> {
    dp_lattice_refined(q1, q2, q1.len(), steps)
}

/// As [`dp_lattice`] on an `m`-node lattice whose cells each span several
/// samples of `q1`, `q2`.
pub fn dp_lattice_refined(
    q1: &[f64],
    q2: &[f64],
    m: usize,
    steps: &[(usize, usize)],
) -> Result<LatticePath> {
    let n = q1.len();
    if q2.len() != n {
        return Err(Error::dim(format!("{} vs {} samples", n, q2.len())));
    }
    if m < 2 || n < m || (n - 1) % (m - 1) != 0 {
        return Err(Error::input(format!(
            "a {m}-node lattice does not subdivide {n} samples"
        )));
    }
    let r = (n - 1) / (m - 1);
    if steps.is_empty() || steps.iter().any(|&(a, b)| a == 0 || b == 0) {
        return Err(Error::input("steps must be non-empty with positive components"));
    }
    let idx = |i: usize, j: usize| i * m + j;
    let mut cost = vec![f64::INFINITY; m * m];
    let mut back = vec![usize::MAX; m * m];
    cost[0] = 0.0;
    for i in 1..m {
        for j in 1..m {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for (s, &(di, dj)) in steps.iter().enumerate() {
                if di > i || dj > j {
                    continue;
                }
                let (k, l) = (i - di, j - dj);
                let base = cost[idx(k, l)];
                if !base.is_finite() {
                    continue;
                }
                let c = base + segment_cost(q1, q2, r, (k, l), (i, j));
                if c < best {
                    best = c;
                    arg = s;
                }
            }
            cost[idx(i, j)] = best;
            back[idx(i, j)] = arg;
        }
    }
    let objective = cost[idx(m - 1, m - 1)];
    if !objective.is_finite() {
        return Err(Error::input("no admissible lattice path for this step set"));
    }
    let mut nodes = vec![(m - 1, m - 1)];
    let (mut i, mut j) = (m - 1, m - 1);
    while (i, j) != (0, 0) {
        let (di, dj) = steps[back[idx(i, j)]];
        i -= di;
        j -= dj;
        nodes.push((i, j));
    }
    nodes.reverse();
    Ok(LatticePath { nodes, objective })
}

/// Piecewise-linear warp through lattice nodes, sampled on the lattice.
pub fn path_to_warp(nodes: &[(usize, usize)], lattice: usize) -> Vec<f64> {
    let h = 1.0 / (lattice - 1) as f64;
    let mut out = vec![0.0; lattice];
    for w in nodes.windows(2) {
        let ((k, l), (i, j)) = (w[0], w[1]);
        let slope = (j - l) as f64 / (i - k) as f64;
        for (u, slot) in out.iter_mut().enumerate().take(i + 1).skip(k) {
            *slot = (l as f64 + slope * (u - k) as f64) * h;
        }
    }
    out
}

/// Half-width of the smoothing applied to the second refinement start.
const SMOOTH_START_CELLS: usize = 3;

/// Symmetric moving average, window shrunk near the ends. Keeps endpoints,
/// monotonicity and linear stretches.
fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, x) in v.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            (prefix[i + h + 1] - prefix[i - h]) / (2 * h + 1) as f64
        })
        .collect()
}

/// Squared cost of lattice cell `c` when the warp runs linearly from `y0`
/// to `y1` across it.
fn cell_cost(q1: &[f64], q2: &[f64], r: usize, c: usize, y0: f64, y1: f64) -> f64 {
    let n = q1.len();
    let h = 1.0 / (n - 1) as f64;
    let slope = (y1 - y0) * ((n - 1) / r) as f64;
    let root = slope.max(0.0).sqrt();
    let mut acc = 0.0;
    for k in 0..=r {
        let u = c * r + k;
        let y = y0 + (y1 - y0) * k as f64 / r as f64;
        let e = q1[u] - interp_uniform(q2, y) * root;
        let w = if k == 0 || k == r { 0.5 } else { 1.0 };
        acc += w * h * e * e;
    }
    acc
}

/// Coordinate descent on interior node values `y[1..m-1]` of a piecewise
/// linear warp, keeping every cell slope in `[smin, smax]`. Returns the final
/// squared cost.
fn refine_nodes(q1: &[f64], q2: &[f64], r: usize, y: &mut [f64], smin: f64, smax: f64) -> f64 {
    const SWEEPS: usize = 20;
    const GOLDEN_ITERS: usize = 16;
    let m = y.len();
    let cell = 1.0 / (m - 1) as f64;
    let mut total: f64 = (0..m - 1).map(|c| cell_cost(q1, q2, r, c, y[c], y[c + 1])).sum();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..SWEEPS {
        let before = total;
        for i in 1..m - 1 {
            let (left, right) = (y[i - 1], y[i + 1]);
            let lo = (left + smin * cell).max(right - smax * cell);
            let hi = (left + smax * cell).min(right - smin * cell);
            if !(hi > lo) {
                continue;
            }
            let local =
                |v: f64| cell_cost(q1, q2, r, i - 1, left, v) + cell_cost(q1, q2, r, i, v, right);
            let current = local(y[i]);
            let (mut a, mut b) = (lo, hi);
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let (mut f1, mut f2) = (local(x1), local(x2));
            for _ in 0..GOLDEN_ITERS {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - inv_phi * (b - a);
                    f1 = local(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + inv_phi * (b - a);
                    f2 = local(x2);
                }
            }
            let (xb, fb) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            if fb < current {
                y[i] = xb;
                total += fb - current;
            }
        }
        if before - total <= 1e-12 * before.max(1e-300) {
            break;
        }
    }
    total.max(0.0)
}

/// Align SRSF `q2` to `q1`: find `γ` minimizing `‖q1 − (q2∘γ)√γ̇‖`.
pub fn align_srsfs(q1: &Srsf, q2: &Srsf, opts: &DpOptions) -> Result<Alignment> {
    let grid = q1.curve().grid();
    if q2.curve().grid() != grid {
        return Err(Error::dim("SRSFs live on different grids"));
    }
    let n = grid.n_points();
    let m = opts.lattice.unwrap_or(n);
    if m < 2 {
        return Err(Error::input("lattice needs at least 2 points"));
    }
    // Sample both SRSFs on a grid that refines every lattice cell evenly.
    let r = (n - 1).div_ceil(m - 1).max(1);
    let fine = (m - 1) * r + 1;
    let (a, b);
    let (s1, s2): (&[f64], &[f64]) = if fine == n {
        (q1.curve().values(), q2.curve().values())
    } else {
        let fg = Grid::new(fine.max(3))?;
        a = q1.curve().resample(fg).into_values();
        b = q2.curve().resample(fg).into_values();
        (&a, &b)
    };
    let path = dp_lattice_refined(s1, s2, m, &opts.steps)?;
    let mut nodes = path_to_warp(&path.nodes, m);
    let mut objective = path.objective;
    if opts.refine && m > 2 {
        let slopes = opts.steps.iter().map(|&(di, dj)| dj as f64 / di as f64);
        let smin = slopes.clone().fold(f64::INFINITY, f64::min);
        let smax = slopes.fold(0.0, f64::max);
        // Lattice paths zigzag between neighbouring slopes; a smoothed copy
        // often starts closer to the continuous optimum.
        let mut smooth = moving_average(&nodes, SMOOTH_START_CELLS);
        let raw_cost = refine_nodes(s1, s2, r, &mut nodes, smin, smax);
        let smooth_cost = refine_nodes(s1, s2, r, &mut smooth, smin, smax);
        let best = if smooth_cost < raw_cost {
            nodes = smooth;
            smooth_cost
        } else {
            raw_cost
        };
        objective = best;
    }
    let values = (0..n).map(|i| interp_uniform(&nodes, grid.point(i))).collect();
    Ok(Alignment {
        warp: WarpingFunction::clamped(Curve::from_raw(grid, values)),
        cost: objective.sqrt(),
    })
}

/// Align `f2` to `f1` on a `dp_grid × dp_grid` lattice.
pub fn align_pair(f1: &Curve, f2: &Curve, dp_grid: usize) -> Result<Alignment> {
    align_pair_with(f1, f2, &DpOptions::with_lattice(dp_grid))
}

pub fn align_pair_with(f1: &Curve, f2: &Curve, opts: &DpOptions) -> Result<Alignment> {
    if f1.grid() != f2.grid() {
        return Err(Error::dim("curves live on different grids"));
    }
    align_srsfs(&srsf_of_function(f1), &srsf_of_function(f2), opts)
}

/// Extended Fisher–Rao distance `‖q1 − q2‖`.
pub fn fr_distance(f1: &Curve, f2: &Curve) -> Result<f64> {
    l2_distance(srsf_of_function(f1).curve(), srsf_of_function(f2).curve())
}

/// Amplitude (shape) distance: the smaller of the two aligned costs.
pub fn amplitude_distance(f1: &Curve, f2: &Curve) -> Result<f64> {
    amplitude_distance_with(f1, f2, &DpOptions::default())
}

pub fn amplitude_distance_with(f1: &Curve, f2: &Curve, opts: &DpOptions) -> Result<f64> {
    if f1.grid() != f2.grid() {
        return Err(Error::dim("curves live on different grids"));
    }
    let q1 = srsf_of_function(f1);
    let q2 = srsf_of_function(f2);
    let forward = align_srsfs(&q1, &q2, opts)?.cost;
    let backward = align_srsfs(&q2, &q1, opts)?.cost;
    Ok(forward.min(backward))
}
