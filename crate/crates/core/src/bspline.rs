//! Clamped B-spline bases on [0,1] with least-squares smoothing.

use nalgebra::{DMatrix, DVector};

use crate::curves::{Curve, Grid};
use crate::error::{Error, Result};

/// A clamped B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    order: usize,
    n_basis: usize,
    /// Full knot vector including the `order`-fold boundary knots.
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// `n_basis` functions of the given `order` (4 = cubic).
    pub fn uniform(n_basis: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::input("B-spline order must be at least 1"));
        }
        if n_basis < order {
            return Err(Error::input(format!(
                "need at least {order} basis functions for order {order}, got {n_basis}"
            )));
        }
        let n_interior = n_basis - order;
        let mut knots = vec![0.0; order];
        knots.extend((1..=n_interior).map(|i| i as f64 / (n_interior + 1) as f64));
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            n_basis,
            knots,
        })
    }

    /// Cubic basis with `n_basis` functions.
    pub fn cubic(n_basis: usize) -> Result<Self> {
        Self::uniform(n_basis, 4)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_interior_knots(&self) -> usize {
        self.n_basis - self.order
    }

    fn span(&self, x: f64) -> usize {
        // Index `s` with knots[s] <= x < knots[s+1], restricted to the
        // non-degenerate spans; x = 1 belongs to the last span.
        let lo = self.order - 1;
        let hi = self.n_basis - 1;
        if x >= self.knots[hi + 1] {
            return hi;
        }
        let mut s = lo;
        while s < hi && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Values of every basis function at `x` (clamped to [0,1]).
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(0.0, 1.0);
        let p = self.order - 1;
        let s = self.span(x);
        let t = &self.knots;
        // Non-zero functions on the span, computed by the triangular recurrence.
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        for (r, v) in n.into_iter().enumerate() {
            out[s - p + r] = v;
        }
        out
    }

    /// Design matrix with one row per abscissa.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.n_basis);
        for (i, &x) in xs.iter().enumerate() {
            for (j, v) in self.eval_all(x).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Evaluate `Σ coefs[j] B_j` on `grid`.
pub fn bspline_expand(basis: &BSplineBasis, coefs: &[f64], grid: Grid) -> Result<Curve> {
    if coefs.len() != basis.n_basis() {
        return Err(Error::dim(format!(
            "{} coefficients for a basis of {} functions",
            coefs.len(),
            basis.n_basis()
        )));
    }
    let values = grid
        .points()
        .into_iter()
        .map(|x| {
            basis
                .eval_all(x)
                .iter()
                .zip(coefs)
                .map(|(b, c)| b * c)
                .sum()
        })
        .collect();
    Curve::new(grid, values)
}

/// Least-squares B-spline coefficients for `(abscissa, ordinate)` samples.
///
/// Abscissae must already be rescaled to [0,1].
pub fn fit_coefficients(xs: &[f64], ys: &[f64], basis: &BSplineBasis) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::dim(format!(
            "{} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < basis.n_basis() {
        return Err(Error::Fit(format!(
            "{} observations cannot determine {} B-spline coefficients",
            xs.len(),
            basis.n_basis()
        )));
    }
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::input(format!("abscissa {x} outside [0,1]")));
    }
    let design = basis.design(xs);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin / smax < 1e-10 {
        return Err(Error::Fit(
            "rank-deficient B-spline design matrix".to_string(),
        ));
    }
    let rhs = DVector::from_column_slice(ys);
    let coef = svd
        .solve(&rhs, 1e-12 * smax)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(coef.iter().copied().collect())
}

/// Least-squares B-spline smoothing of raw samples, evaluated on `grid`.
pub fn smooth_to_curve(
    xs: &[f64],
    ys: &[f64],
    basis: &BSplineBasis,
    grid: Grid,
) -> Result<Curve> {
    let coefs = fit_coefficients(xs, ys, basis)?;
    bspline_expand(basis, &coefs, grid)
}
