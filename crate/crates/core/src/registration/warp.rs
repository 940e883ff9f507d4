//! Warping functions and square-root slope functions (SRSFs).

use crate::curves::{cumulative_integral, differentiate, inner_product, Curve, Grid};
use crate::error::{Error, Result};

/// Tolerance for monotonicity and endpoint checks.
const WARP_TOL: f64 = 1e-10;

/// Derivative floor applied before square roots.
const SLOPE_FLOOR: f64 = 1e-10;

/// A boundary-preserving nondecreasing map of [0,1] onto itself.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingFunction {
    curve: Curve,
}

impl WarpingFunction {
    /// Validate `curve` as a warping function.
    pub fn new(curve: Curve) -> Result<Self> {
        let v = curve.values();
        if v[0].abs() > WARP_TOL || (v[v.len() - 1] - 1.0).abs() > WARP_TOL {
            return Err(Error::InvalidWarping(format!(
                "endpoints must be 0 and 1, got {} and {}",
                v[0],
                v[v.len() - 1]
            )));
        }
        if let Some(i) = v.windows(2).position(|w| w[1] < w[0] - WARP_TOL) {
            return Err(Error::InvalidWarping(format!(
                "decreasing between grid points {i} and {}",
                i + 1
            )));
        }
        if v.iter().any(|x| !(-WARP_TOL..=1.0 + WARP_TOL).contains(x)) {
            return Err(Error::InvalidWarping("values outside [0,1]".into()));
        }
        Ok(Self::clamped(curve))
    }

    /// Project arbitrary samples onto the set of warpings: clamp to [0,1],
    /// enforce monotonicity with a running maximum and pin the endpoints.
    pub fn clamped(curve: Curve) -> Self {
        let grid = curve.grid();
        let mut v = curve.into_values();
        let last = v.len() - 1;
        let mut run = 0.0f64;
        for x in v.iter_mut() {
            run = run.max(x.clamp(0.0, 1.0));
            *x = run;
        }
        v[0] = 0.0;
        v[last] = 1.0;
        Self {
            curve: Curve::from_raw(grid, v),
        }
    }

    pub fn identity(grid: Grid) -> Self {
        Self {
            curve: Curve::identity(grid),
        }
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn values(&self) -> &[f64] {
        self.curve.values()
    }

    pub fn grid(&self) -> Grid {
        self.curve.grid()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval(x)
    }

    /// `self ∘ inner`, i.e. `t ↦ self(inner(t))`.
    pub fn compose(&self, inner: &WarpingFunction) -> Result<WarpingFunction> {
        Ok(WarpingFunction::clamped(compose(&self.curve, inner)?))
    }

    /// Pointwise convex combination `Σ wⱼ γⱼ`; weights must be nonnegative
    /// and sum to one.
    pub fn convex_combination(warps: &[WarpingFunction], weights: &[f64]) -> Result<Self> {
        if warps.is_empty() || warps.len() != weights.len() {
            return Err(Error::dim(format!(
                "{} warps with {} weights",
                warps.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| w < -1e-12) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-8
        {
            return Err(Error::input("convex weights must be nonnegative and sum to 1"));
        }
        let grid = warps[0].grid();
        let mut acc = vec![0.0; grid.n_points()];
        for (w, g) in warps.iter().zip(weights) {
            if w.grid() != grid {
                return Err(Error::dim("warps live on different grids"));
            }
            for (a, v) in acc.iter_mut().zip(w.values()) {
                *a += g * v;
            }
        }
        Ok(Self::clamped(Curve::from_raw(grid, acc)))
    }

    /// Sup-norm distance to the identity warp.
    pub fn deviation_from_identity(&self) -> f64 {
        let g = self.grid();
        self.values()
            .iter()
            .enumerate()
            .fold(0.0, |m, (i, v)| m.max((v - g.point(i)).abs()))
    }
}

/// Which transform produced an [`Srsf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrsfKind {
    /// `√γ̇` of a warping function; unit L² norm.
    Warp,
    /// `ḟ/√|ḟ|` of a general curve.
    General,
}

/// A square-root slope function.
#[derive(Debug, Clone, PartialEq)]
pub struct Srsf {
    curve: Curve,
    kind: SrsfKind,
}

impl Srsf {
    pub fn new(curve: Curve, kind: SrsfKind) -> Self {
        Self { curve, kind }
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn into_curve(self) -> Curve {
        self.curve
    }

    pub fn kind(&self) -> SrsfKind {
        self.kind
    }

    pub fn norm(&self) -> f64 {
        self.curve.norm()
    }

    /// Rescale to unit L² norm; the zero function is returned unchanged.
    pub fn normalized(&self) -> Srsf {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Srsf::new(self.curve.scale(1.0 / n), self.kind)
    }

    /// Cosine of the angle to `other` under the L² inner product.
    pub fn cosine(&self, other: &Srsf) -> Result<f64> {
        let ip = inner_product(&self.curve, &other.curve)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok(ip / denom)
    }
}

/// `s = √γ̇`.
pub fn srsf_of_warping(warp: &WarpingFunction) -> Result<Srsf> {
    let v = warp.values();
    if let Some(i) = v.windows(2).position(|w| w[1] - w[0] < -WARP_TOL) {
        return Err(Error::InvalidWarping(format!(
            "negative slope between grid points {i} and {}",
            i + 1
        )));
    }
    let d = differentiate(warp.curve());
    Ok(Srsf::new(d.map(|x| x.max(SLOPE_FLOOR).sqrt()), SrsfKind::Warp))
}

/// `γ(t) = ∫₀ᵗ s²`, rescaled so that `γ(1) = 1` exactly.
pub fn warping_of_srsf(srsf: &Srsf) -> Result<WarpingFunction> {
    if srsf.kind() != SrsfKind::Warp {
        return Err(Error::input("inverse SRSF map needs a warp-kind SRSF"));
    }
    let sq = srsf.curve().map(|x| x * x);
    let cum = cumulative_integral(&sq);
    let total = cum.values()[cum.len() - 1];
    if !(total > 1e-300) {
        return Err(Error::DegenerateSrsf(
            "squared SRSF integrates to zero".into(),
        ));
    }
    Ok(WarpingFunction::clamped(cum.scale(1.0 / total)))
}

/// `q = ḟ/√|ḟ|`, zero where the slope vanishes.
pub fn srsf_of_function(f: &Curve) -> Srsf {
    let d = differentiate(f);
    Srsf::new(
        d.map(|x| {
            if x.abs() < 1e-12 {
                0.0
            } else {
                x / x.abs().sqrt()
            }
        }),
        SrsfKind::General,
    )
}

/// Reconstruct a function from its SRSF and starting value: `f(t) = f0 + ∫ q|q|`.
pub fn function_of_srsf(q: &Srsf, start: f64) -> Curve {
    let integrand = q.curve().map(|x| x * x.abs());
    cumulative_integral(&integrand).map(|v| v + start)
}

/// `f ∘ γ` by linear interpolation of `f` at `γ(t)`.
pub fn compose(f: &Curve, warp: &WarpingFunction) -> Result<Curve> {
    if f.grid() != warp.grid() {
        return Err(Error::dim("curve and warp live on different grids"));
    }
    let values = warp.values().iter().map(|&x| f.eval(x)).collect();
    Ok(Curve::from_raw(f.grid(), values))
}

/// Group action on SRSFs: `(q ∘ γ)·√γ̇`.
pub fn warp_srsf(q: &Srsf, warp: &WarpingFunction) -> Result<Srsf> {
    let composed = compose(q.curve(), warp)?;
    let root = srsf_of_warping(warp)?;
    Ok(Srsf::new(
        composed.zip_with(root.curve(), |a, b| a * b)?,
        q.kind(),
    ))
}

/// Numerical inverse: swap axes and re-interpolate onto the grid.
pub fn invert_warping(warp: &WarpingFunction) -> Result<WarpingFunction> {
    let v = warp.values();
    let grid = warp.grid();
    let n = v.len();
    // Reject flat runs spanning more than one cell.
    let mut flat = 0usize;
    for w in v.windows(2) {
        if w[1] - w[0] <= 1e-14 {
            flat += 1;
            if flat >= 2 {
                return Err(Error::NonInvertible(
                    "flat segment wider than one grid cell".into(),
                ));
            }
        } else {
            flat = 0;
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut k = 0usize;
    for i in 0..n {
        let y = grid.point(i);
        while k + 2 < n && v[k + 1] < y {
            k += 1;
        }
        let (a, b) = (v[k], v[k + 1]);
        let frac = if b > a { ((y - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        out.push(grid.point(k) + frac * (grid.point(k + 1) - grid.point(k)));
    }
    Ok(WarpingFunction::clamped(Curve::from_raw(grid, out)))
}

/// Mean warp on the SRSF sphere: average the SRSFs, renormalize and map back.
pub fn mean_warp(warps: &[WarpingFunction]) -> Result<WarpingFunction> {
    let first = warps
        .first()
        .ok_or_else(|| Error::input("mean of an empty set of warps"))?;
    let grid = first.grid();
    let mut acc = vec![0.0; grid.n_points()];
    for w in warps {
        let s = srsf_of_warping(w)?;
        for (a, v) in acc.iter_mut().zip(s.curve().values()) {
            *a += v;
        }
    }
    let mean = Srsf::new(Curve::from_raw(grid, acc), SrsfKind::Warp).normalized();
    warping_of_srsf(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    fn square_warp(n: usize) -> WarpingFunction {
        WarpingFunction::new(Curve::from_fn(g(n), |x| x * x)).unwrap()
    }

    #[test]
    fn warping_validation() {
        assert!(WarpingFunction::new(Curve::from_fn(g(11), |x| 0.5 * x)).is_err());
        assert!(WarpingFunction::new(Curve::from_fn(g(11), |x| {
            if x < 0.5 { x } else { 1.5 - x }
        }))
        .is_err());
        let c = WarpingFunction::clamped(Curve::new(g(3), vec![0.2, 0.1, 0.9]).unwrap());
        assert_eq!(c.values(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn srsf_of_identity_is_one() {
        let s = srsf_of_warping(&WarpingFunction::identity(g(101))).unwrap();
        assert!(s.curve().values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(s.kind(), SrsfKind::Warp);
    }

    #[test]
    fn srsf_of_square() {
        let s = srsf_of_warping(&square_warp(1001)).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-4);
        let truth = Curve::from_fn(g(1001), |x| (2.0 * x).sqrt());
        let err = s.curve().sub(&truth).unwrap();
        assert!(err.values()[10..].iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn inverse_srsf_map() {
        let one = Srsf::new(Curve::constant(g(101), 1.0), SrsfKind::Warp);
        let id = warping_of_srsf(&one).unwrap();
        assert!(id.deviation_from_identity() < 1e-12);
        let zero = Srsf::new(Curve::zeros(g(101)), SrsfKind::Warp);
        assert!(matches!(warping_of_srsf(&zero), Err(Error::DegenerateSrsf(_))));
        let back = warping_of_srsf(&srsf_of_warping(&square_warp(1001)).unwrap()).unwrap();
        assert!(back.curve().sub(square_warp(1001).curve()).unwrap().sup_norm() < 1e-4);
    }

    #[test]
    fn srsf_of_function_examples() {
        let grid = g(1001);
        let q = srsf_of_function(&Curve::identity(grid));
        assert!(q.curve().values().iter().all(|v| (v - 1.0).abs() < 1e-10));
        let q0 = srsf_of_function(&Curve::constant(grid, 2.0));
        assert!(q0.curve().values().iter().all(|&v| v == 0.0));
        let qs = srsf_of_function(&Curve::from_fn(grid, |x| x * x));
        for i in 50..1001 {
            let x = grid.point(i);
            assert!((qs.curve().values()[i] - (2.0 * x).sqrt()).abs() < 1e-3);
        }
        let rebuilt = function_of_srsf(&qs, 0.0);
        assert!(rebuilt.sub(&Curve::from_fn(grid, |x| x * x)).unwrap().sup_norm() < 1e-3);
    }

    #[test]
    fn compose_examples() {
        let grid = g(1001);
        let f = Curve::from_fn(grid, |x| (3.0 * x).sin() + x);
        let id = WarpingFunction::identity(grid);
        assert_eq!(compose(&f, &id).unwrap(), f);
        let gam = square_warp(1001);
        let inv = invert_warping(&gam).unwrap();
        let back = compose(&compose(&f, &gam).unwrap(), &inv).unwrap();
        assert!(back.sub(&f).unwrap().sup_norm() < 1e-3);
        let t = Curve::identity(grid);
        assert!(compose(&t, &gam).unwrap().sub(gam.curve()).unwrap().sup_norm() < 1e-15);
        assert!(compose(&Curve::zeros(g(11)), &gam).is_err());
    }

    #[test]
    fn invert_examples() {
        let grid = g(1001);
        let id = WarpingFunction::identity(grid);
        assert!(invert_warping(&id).unwrap().deviation_from_identity() < 1e-12);
        let inv = invert_warping(&square_warp(1001)).unwrap();
        let truth = Curve::from_fn(grid, f64::sqrt);
        assert!(inv.curve().sub(&truth).unwrap().sup_norm() < 1e-3);
        let flat = WarpingFunction::new(
            Curve::new(g(5), vec![0.0, 0.5, 0.5, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(invert_warping(&flat), Err(Error::NonInvertible(_))));
    }

    #[test]
    fn convex_combination_stays_a_warp() {
        let grid = g(201);
        let a = square_warp(201);
        let b = WarpingFunction::new(Curve::from_fn(grid, f64::sqrt)).unwrap();
        let c = WarpingFunction::convex_combination(&[a.clone(), b], &[0.5, 0.5]).unwrap();
        assert!(WarpingFunction::new(c.curve().clone()).is_ok());
        let only_a = WarpingFunction::convex_combination(&[a.clone(), a.clone()], &[0.3, 0.7]).unwrap();
        assert!(only_a.curve().sub(a.curve()).unwrap().sup_norm() < 1e-15);
        assert!(WarpingFunction::convex_combination(&[a.clone()], &[0.5]).is_err());
    }

    #[test]
    fn mean_of_identical_warps() {
        let a = square_warp(1001);
        let m = mean_warp(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!(m.curve().sub(a.curve()).unwrap().sup_norm() < 1e-3);
    }
}
