//! Gyrovector operations on the Poincaré ball of curvature `-κ`.
//!
//! All formulas take the curvature magnitude `κ > 0`; the ball is the open
//! set `{x : κ‖x‖² < 1}`. Every returned [`BallPoint`] has been passed
//! through [`project_to_ball`], so its norm never exceeds
//! `(1 - BOUNDARY_EPS) / √κ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{atanh, dot, norm, norm_sq, sqrt, tanh};
use crate::{Error, Matrix, Result, BOUNDARY_EPS, DENOM_EPS};

/// Positive curvature magnitude `κ = |c|`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CurvatureMag(f64);

impl CurvatureMag {
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa.is_finite() && kappa > 0.0 {
            Ok(Self(kappa))
        } else {
            Err(Error::InvalidCurvature(kappa))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        sqrt(self.0)
    }

    /// Ball radius `1/√κ`.
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt()
    }

    /// Largest norm a stored point may have.
    pub fn max_norm(self) -> f64 {
        (1.0 - BOUNDARY_EPS) / self.sqrt()
    }
}

/// A point strictly inside the ball of curvature `-κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    kappa: CurvatureMag,
}

/// A tangent vector; the base point is whichever point it is passed with.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub Vec<f64>);

/// Conformal factor `λ_x = 2 / (1 - κ‖x‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ConformalFactor(f64);

impl ConformalFactor {
    pub fn at(x: &BallPoint) -> Self {
        Self(raw::conformal_factor(&x.coords, x.kappa.get()))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl BallPoint {
    /// Accepts `coords` only if it already satisfies the boundary guard.
    pub fn new(coords: Vec<f64>, kappa: CurvatureMag) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        if norm(&coords) > kappa.max_norm() {
            return Err(Error::invalid("point lies outside the guarded ball"));
        }
        Ok(Self { coords, kappa })
    }

    pub fn origin(dim: usize, kappa: CurvatureMag) -> Self {
        Self {
            coords: vec![0.0; dim],
            kappa,
        }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    #[inline]
    pub fn kappa(&self) -> CurvatureMag {
        self.kappa
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    /// Gyro-inverse `-x`.
    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|c| -c).collect(),
            kappa: self.kappa,
        }
    }

    pub fn conformal_factor(&self) -> ConformalFactor {
        ConformalFactor::at(self)
    }
}

fn same_ball(x: &BallPoint, y: &BallPoint) -> Result<()> {
    if x.kappa != y.kappa {
        return Err(Error::CurvatureMismatch {
            left: x.kappa.get(),
            right: y.kappa.get(),
        });
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Rescales `coords` onto the guarded ball if it lies at or beyond its boundary.
pub fn project_to_ball(mut coords: Vec<f64>, kappa: CurvatureMag) -> Result<BallPoint> {
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    raw::project_in_place(&mut coords, kappa.get());
    Ok(BallPoint { coords, kappa })
}

/// Möbius addition `x ⊕ y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    same_ball(x, y)?;
    let mut out = vec![0.0; x.dim()];
    raw::mobius_add(&x.coords, &y.coords, x.kappa.get(), &mut out)?;
    project_to_ball(out, x.kappa)
}

/// Geodesic distance `2/√κ · artanh(√κ ‖-x ⊕ y‖)`.
pub fn geodesic_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    geodesic_distance_flagged(x, y).map(|(d, _)| d)
}

/// Geodesic distance plus a flag telling whether the `artanh` argument had
/// to be clipped to `1 - BOUNDARY_EPS`.
pub fn geodesic_distance_flagged(x: &BallPoint, y: &BallPoint) -> Result<(f64, bool)> {
    same_ball(x, y)?;
    raw::distance(&x.coords, &y.coords, x.kappa.get())
}

/// Möbius matrix-vector product `M ⊗ x`.
pub fn mobius_matvec(m: &Matrix, x: &BallPoint) -> Result<BallPoint> {
    mobius_matvec_flagged(m, x).map(|(p, _)| p)
}

/// Like [`mobius_matvec`]; the flag is set when the origin convention
/// (`x = 0` or `Mx = 0`) decided the result.
pub fn mobius_matvec_flagged(m: &Matrix, x: &BallPoint) -> Result<(BallPoint, bool)> {
    if m.cols() != x.dim() || m.rows() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut mx = m.matvec(&x.coords);
    let convention = raw::matvec_rescale(&x.coords, &mut mx, x.kappa.get());
    Ok((project_to_ball(mx, x.kappa)?, convention))
}

/// Exponential map at `x`.
pub fn exp_map(x: &BallPoint, v: &TangentVector) -> Result<BallPoint> {
    if v.0.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: v.0.len(),
        });
    }
    let k = x.kappa.get();
    let v_norm = norm(&v.0);
    if v_norm == 0.0 {
        return Ok(x.clone());
    }
    let sk = sqrt(k);
    let lambda = raw::conformal_factor(&x.coords, k);
    let scale = tanh(sk * lambda * v_norm / 2.0) / (sk * v_norm);
    let step: Vec<f64> = v.0.iter().map(|c| c * scale).collect();
    let mut out = vec![0.0; x.dim()];
    raw::mobius_add(&x.coords, &step, k, &mut out)?;
    project_to_ball(out, x.kappa)
}

/// Logarithmic map at `x`; `log_x(x) = 0`.
pub fn log_map(x: &BallPoint, y: &BallPoint) -> Result<TangentVector> {
    same_ball(x, y)?;
    let k = x.kappa.get();
    let mut w = vec![0.0; x.dim()];
    let neg_x: Vec<f64> = x.coords.iter().map(|c| -c).collect();
    raw::mobius_add(&neg_x, &y.coords, k, &mut w)?;
    let w_norm = norm(&w);
    if w_norm == 0.0 {
        return Ok(TangentVector(w));
    }
    let sk = sqrt(k);
    let lambda = raw::conformal_factor(&x.coords, k);
    let (arg, _) = raw::clip_artanh_arg(sk * w_norm);
    let scale = 2.0 / (sk * lambda) * atanh(arg) / w_norm;
    Ok(TangentVector(w.into_iter().map(|c| c * scale).collect()))
}

/// Log map at the origin, in closed form.
pub fn log0(x: &BallPoint) -> TangentVector {
    let mut out = vec![0.0; x.dim()];
    raw::log0(&x.coords, x.kappa.get(), &mut out);
    TangentVector(out)
}

/// Exp map at the origin, in closed form.
pub fn exp0(v: &[f64], kappa: CurvatureMag) -> Result<BallPoint> {
    let mut out = vec![0.0; v.len()];
    raw::exp0(v, kappa.get(), &mut out);
    project_to_ball(out, kappa)
}

/// Einstein midpoint: map to the Klein model, take the Lorentz-weighted
/// mean, map back.
pub fn einstein_midpoint(points: &[BallPoint]) -> Result<BallPoint> {
    let first = points.first().ok_or(Error::EmptyInput)?;
    for p in &points[1..] {
        same_ball(first, p)?;
    }
    let rows: Vec<&[f64]> = points.iter().map(|p| p.coords()).collect();
    let mut out = vec![0.0; first.dim()];
    raw::einstein_midpoint(&rows, first.kappa.get(), &mut out);
    project_to_ball(out, first.kappa)
}

/// Slice-level kernels behind the typed API. They take `κ` as a bare
/// `f64` and write into caller-provided buffers; callers are expected to
/// have validated dimensions.
pub mod raw {
    use super::*;

    #[inline]
    pub fn conformal_factor(x: &[f64], k: f64) -> f64 {
        2.0 / (1.0 - k * norm_sq(x))
    }

    /// Returns the possibly clipped `artanh` argument and whether clipping fired.
    #[inline]
    pub fn clip_artanh_arg(arg: f64) -> (f64, bool) {
        let hi = 1.0 - BOUNDARY_EPS;
        if arg > hi {
            (hi, true)
        } else {
            (arg, false)
        }
    }

    pub fn project_in_place(coords: &mut [f64], k: f64) {
        let max = (1.0 - BOUNDARY_EPS) / sqrt(k);
        let n = norm(coords);
        if n > max {
            let s = max / n;
            for c in coords.iter_mut() {
                *c *= s;
            }
        }
    }

    pub fn mobius_add(x: &[f64], y: &[f64], k: f64, out: &mut [f64]) -> Result<()> {
        let xy = dot(x, y);
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let den = 1.0 + 2.0 * k * xy + k * k * x2 * y2;
        if den < DENOM_EPS {
            return Err(Error::Degenerate("Möbius addition denominator vanished"));
        }
        let a = (1.0 + 2.0 * k * xy + k * y2) / den;
        let b = (1.0 - k * x2) / den;
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = a * xi + b * yi;
        }
        Ok(())
    }

    /// Norm of `-x ⊕ y` without allocating.
    pub fn gyro_diff_norm(x: &[f64], y: &[f64], k: f64) -> Result<f64> {
        // -x ⊕ y = (a·(-x) + b·y) with the coefficients of `mobius_add`.
        let xy = -dot(x, y);
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let den = 1.0 + 2.0 * k * xy + k * k * x2 * y2;
        if den < DENOM_EPS {
            return Err(Error::Degenerate("Möbius addition denominator vanished"));
        }
        let a = (1.0 + 2.0 * k * xy + k * y2) / den;
        let b = (1.0 - k * x2) / den;
        let sq: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let w = b * yi - a * xi;
                w * w
            })
            .sum();
        Ok(sqrt(sq))
    }

    pub fn distance(x: &[f64], y: &[f64], k: f64) -> Result<(f64, bool)> {
        let sk = sqrt(k);
        let w = gyro_diff_norm(x, y, k)?;
        let (arg, saturated) = clip_artanh_arg(sk * w);
        Ok((2.0 / sk * atanh(arg), saturated))
    }

    /// Turns `mx = M·x` into `M ⊗ x` in place; `x` must already lie inside
    /// the ball. Returns `true` when the origin convention applied.
    pub fn matvec_rescale(x: &[f64], mx: &mut [f64], k: f64) -> bool {
        let x_norm = norm(x);
        let mx_norm = norm(mx);
        if x_norm <= DENOM_EPS || mx_norm <= DENOM_EPS {
            mx.iter_mut().for_each(|c| *c = 0.0);
            return true;
        }
        if mx == x {
            // tanh(artanh(a)) = a; x is already inside the ball
            return false;
        }
        let sk = sqrt(k);
        let (arg, _) = clip_artanh_arg(sk * x_norm);
        let s = tanh(mx_norm / x_norm * atanh(arg)) / (sk * mx_norm);
        mx.iter_mut().for_each(|c| *c *= s);
        project_in_place(mx, k);
        false
    }

    pub fn log0(x: &[f64], k: f64, out: &mut [f64]) {
        let sk = sqrt(k);
        let n = norm(x);
        if n == 0.0 {
            out.iter_mut().for_each(|c| *c = 0.0);
            return;
        }
        let (arg, _) = clip_artanh_arg(sk * n);
        let s = atanh(arg) / (sk * n);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = s * xi;
        }
    }

    pub fn exp0(v: &[f64], k: f64, out: &mut [f64]) {
        let sk = sqrt(k);
        let n = norm(v);
        if n == 0.0 {
            out.iter_mut().for_each(|c| *c = 0.0);
            return;
        }
        let s = tanh(sk * n) / (sk * n);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = s * vi;
        }
        project_in_place(out, k);
    }

    pub fn einstein_midpoint(points: &[&[f64]], k: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        let mut weight = 0.0;
        for x in points {
            let to_klein = 2.0 / (1.0 + k * norm_sq(x));
            let u2 = to_klein * to_klein * norm_sq(x);
            let gamma = 1.0 / sqrt((1.0 - k * u2).max(DENOM_EPS));
            weight += gamma;
            for (o, xi) in out.iter_mut().zip(x.iter()) {
                *o += gamma * to_klein * xi;
            }
        }
        out.iter_mut().for_each(|c| *c /= weight);
        let u2 = norm_sq(out);
        let back = 1.0 / (1.0 + sqrt((1.0 - k * u2).max(0.0)));
        out.iter_mut().for_each(|c| *c *= back);
        project_in_place(out, k);
    }
}
