//! Uniform grids on [0,1] and sampled curves.
//!
//! Every curve in the crate lives on a [`Grid`]: `n` uniformly spaced points
//! with `points[0] = 0` and `points[n-1] = 1`. Integrals use the trapezoid rule
//! and derivatives use second-order finite differences, including one-sided
//! second-order stencils at the two endpoints.

use crate::error::{Error, Result};

/// Default resolution used for model fitting.
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Uniform grid over [0,1].
///
/// A uniform grid is fully determined by its size, so the points are computed
/// on demand and grids are cheap to copy and compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::input(format!(
                "grid needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Spacing between consecutive points.
    pub fn step(&self) -> f64 {
        1.0 / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Trapezoid quadrature weights; they sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n_points];
        w[0] = 0.5 * h;
        w[self.n_points - 1] = 0.5 * h;
        w
    }

    /// Build a grid from explicit abscissae, checking that they are the
    /// uniform points over [0,1]. Values written with at least ten
    /// significant digits are accepted.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        let grid = Grid::new(points.len())?;
        for (i, &x) in points.iter().enumerate() {
            if (x - grid.point(i)).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "grid point {i} = {x} is not on the uniform grid over [0,1]"
                )));
            }
        }
        Ok(grid)
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// A real function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Grid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::dim(format!(
                "curve has {} values but grid has {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("curve value at index {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_points()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn identity(grid: Grid) -> Self {
        Self {
            grid,
            values: grid.points(),
        }
    }

    /// Construct without validation; callers guarantee length and finiteness.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Piecewise-linear evaluation at `x`, clamped to [0,1].
    pub fn eval(&self, x: f64) -> f64 {
        interp_uniform(&self.values, x)
    }

    /// Resample onto another grid by linear interpolation.
    pub fn resample(&self, grid: Grid) -> Curve {
        if grid == self.grid {
            return self.clone();
        }
        Curve::from_fn(grid, |x| self.eval(x))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Curve {
        Curve::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Curve, f: impl Fn(f64, f64) -> f64) -> Result<Curve> {
        check_same_grid(self, other)?;
        Ok(Curve::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Curve {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(&self.grid.weights(), &self.values, &self.values).sqrt()
    }

    /// max − min of the sampled values.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn integral(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }
}

pub(crate) fn check_same_grid(f: &Curve, g: &Curve) -> Result<()> {
    if f.grid != g.grid {
        return Err(Error::dim(format!(
            "curves live on different grids ({} vs {} points)",
            f.grid.n_points(),
            g.grid.n_points()
        )));
    }
    Ok(())
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Linear interpolation of values sampled on a uniform grid over [0,1].
pub(crate) fn interp_uniform(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let pos = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-12 {
        return values[nearest as usize];
    }
    let i = (pos.floor() as usize).min(n - 2);
    let frac = pos - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Trapezoid approximation of the L² inner product.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_same_grid(f, g)?;
    Ok(weighted_dot(&f.grid.weights(), &f.values, &g.values))
}

/// L² distance induced by [`inner_product`].
pub fn l2_distance(f: &Curve, g: &Curve) -> Result<f64> {
    check_same_grid(f, g)?;
    let w = f.grid.weights();
    let s: f64 = w
        .iter()
        .zip(f.values.iter().zip(&g.values))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum();
    Ok(s.max(0.0).sqrt())
}

/// Second-order finite-difference derivative.
pub fn differentiate(f: &Curve) -> Curve {
    let v = &f.values;
    let n = v.len();
    let h = f.grid.step();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    Curve::from_raw(f.grid, d)
}

/// Cumulative trapezoid integral starting at 0.
pub fn cumulative_integral(f: &Curve) -> Curve {
    let h = f.grid.step();
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    Curve::from_raw(f.grid, out)
}

/// Pointwise mean of a non-empty set of curves on a shared grid.
pub fn mean_curve(curves: &[Curve]) -> Result<Curve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::input("mean of an empty set of curves"))?;
    let mut acc = vec![0.0; first.len()];
    for c in curves {
        check_same_grid(first, c)?;
        for (a, v) in acc.iter_mut().zip(&c.values) {
            *a += v;
        }
    }
    let n = curves.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Curve::from_raw(first.grid, acc))
}
