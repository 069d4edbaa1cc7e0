//! Error metric between a sensed and a true density, and its closed-form
//! asymptotic value and bounds.
//!
//! A sensed density is only meaningful up to a positive scale, so it is first
//! projected onto the closest member of its scaling class,
//! `psi' = psi * <psi, phi> / |psi|^2`, and compared with
//! `|psi' - phi| / (|psi'| + |phi|)`.
//!
//! When `E[psi] = p * phi + lambda`, that metric depends only on `p`,
//! `s = lambda / h` (`h` the mean density) and the shape parameter
//! `c = |phi|_2 * sqrt(r) / |phi|_1`. All norms are Euclidean.

use std::ops::Index;

use serde::Serialize;

use crate::error::{Error, Result};

/// Non-negative density indexed by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector(Vec<f64>);

impl DensityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("density vector must have at least one bucket".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!("density entry {i} is {v}")));
        }
        Ok(DensityVector(values))
    }

    pub fn uniform(value: f64, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total mass (L1 norm).
    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `a * self + b` element-wise.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| a * v + b).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Index<usize> for DensityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for DensityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

/// Parameters entering the closed-form error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    pub p: f64,
    pub lambda: f64,
    /// Mean true density per bucket.
    pub h: f64,
    /// Distribution shape, in `[1, sqrt(r)]`.
    pub c: f64,
}

impl TheoryParams {
    pub fn new(p: f64, lambda: f64, h: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("p = {p} outside (0, 1]")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda = {lambda} must be >= 0")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("h = {h} must be > 0")));
        }
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::Domain(format!("c = {c} must be >= 1")));
        }
        Ok(TheoryParams { p, lambda, h, c })
    }

    /// `h` and `c` measured from a true density.
    pub fn from_phi(p: f64, lambda: f64, phi: &DensityVector) -> Result<Self> {
        Self::new(p, lambda, mean_density(phi), shape_c(phi)?)
    }

    pub fn closed_form_error(&self) -> Result<f64> {
        closed_form_error(self.p, self.lambda / self.h, self.c)
    }

    pub fn bound_tight(&self) -> Result<f64> {
        bound_tight(self.p, self.lambda, self.h, self.c)
    }

    pub fn bound_loose(&self) -> Result<f64> {
        bound_loose(self.p, self.lambda, self.h)
    }
}

fn check_dims(a: &DensityVector, b: &DensityVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scale factor `<psi, phi> / |psi|^2`, 0 when `psi` is the zero vector.
fn projection_scale(psi: &[f64], phi: &[f64]) -> f64 {
    let nn = dot(psi, psi);
    if nn == 0.0 {
        0.0
    } else {
        dot(psi, phi) / nn
    }
}

/// Closest point to `phi` on the ray spanned by `psi`.
pub fn project(psi: &DensityVector, phi: &DensityVector) -> Result<DensityVector> {
    check_dims(psi, phi)?;
    let a = projection_scale(&psi.0, &phi.0);
    Ok(DensityVector(psi.0.iter().map(|v| a * v).collect()))
}

/// `|psi' - phi| / (|psi'| + |phi|)`, in `[0, 1]`; 0 when both are zero.
pub fn normalized_error(psi: &DensityVector, phi: &DensityVector) -> Result<f64> {
    check_dims(psi, phi)?;
    let a = projection_scale(&psi.0, &phi.0);
    let (mut diff2, mut proj2, mut phi2) = (0.0, 0.0, 0.0);
    for (&s, &f) in psi.0.iter().zip(&phi.0) {
        let q = a * s;
        diff2 += (q - f) * (q - f);
        proj2 += q * q;
        phi2 += f * f;
    }
    let denom = proj2.sqrt() + phi2.sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((diff2.sqrt() / denom).clamp(0.0, 1.0))
}

/// Asymptotic error as a function of `p`, `s = lambda / h` and `c`.
pub fn closed_form_error(p: f64, s: f64, c: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Domain(format!("closed form needs p > 0, got {p}")));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("closed form needs lambda/h >= 0, got {s}")));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::Domain(format!("closed form needs c >= 1, got {c}")));
    }
    let c2 = c * c;
    let ps = p + s;
    let pcs = p * c2 + s;
    // Cancellation can leave a tiny negative radicand near c = 1.
    let radicand = (c2 * ps * ps + pcs * pcs - 2.0 * ps * pcs).max(0.0);
    let scaled_norm2 = p * p * c2 + s * s + 2.0 * p * s;
    let denom = pcs * scaled_norm2.sqrt() + scaled_norm2 * c;
    Ok(s * radicand.sqrt() / denom)
}

/// Error of a flat (constant) sensed density against a true density of
/// shape `c`: the `p -> 0` limit of [`closed_form_error`] for `lambda > 0`.
pub fn flat_sensing_error(c: f64) -> Result<f64> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c = {c} must be >= 1")));
    }
    Ok((c * c - 1.0).sqrt() / (1.0 + c))
}

/// First-order bound `sqrt(c^2 - 1) * lambda / (2 c^2 h p)`.
pub fn bound_tight(p: f64, lambda: f64, h: f64, c: f64) -> Result<f64> {
    if !(p > 0.0 && h > 0.0) {
        return Err(Error::Domain(format!("bound needs p > 0 and h > 0, got p={p}, h={h}")));
    }
    if c.is_nan() || c < 1.0 {
        return Err(Error::Domain(format!("bound needs c >= 1, got {c}")));
    }
    Ok((c * c - 1.0).sqrt() * lambda / (2.0 * c * c * h * p))
}

/// Shape-free bound `lambda / (4 h p)`.
pub fn bound_loose(p: f64, lambda: f64, h: f64) -> Result<f64> {
    if !(p > 0.0 && h > 0.0) {
        return Err(Error::Domain(format!("bound needs p > 0 and h > 0, got p={p}, h={h}")));
    }
    Ok(lambda / (4.0 * h * p))
}

/// Bound from the mean sensed density: `lambda / (4 (h_hat - lambda))`.
/// Uninformative (and rejected) unless `h_hat > lambda`.
pub fn bound_from_sampled_density(lambda: f64, h_hat: f64) -> Result<f64> {
    if h_hat.is_nan() || lambda.is_nan() || h_hat <= lambda {
        return Err(Error::Domain(format!(
            "sampled density {h_hat} does not exceed lambda {lambda}; bound is uninformative"
        )));
    }
    Ok(lambda / (4.0 * (h_hat - lambda)))
}

/// `|phi|_2 * sqrt(r) / |phi|_1`.
pub fn shape_c(phi: &DensityVector) -> Result<f64> {
    let m = phi.mass();
    if m <= 0.0 {
        return Err(Error::Domain("shape parameter undefined for an all-zero density".into()));
    }
    let r = phi.len() as f64;
    // Rounding may push a uniform vector a hair below 1.
    Ok((phi.norm() * r.sqrt() / m).clamp(1.0, r.sqrt()))
}

/// Mean density `h = m / r`.
pub fn mean_density(phi: &DensityVector) -> f64 {
    phi.mass() / phi.len() as f64
}

/// Unbiased estimate of `h` from the mean sensed density: `(h_hat - lambda) / p`.
pub fn unbiased_h(h_hat: f64, p: f64, lambda: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::Domain(format!("unbiased h needs p > 0, got {p}")));
    }
    Ok((h_hat - lambda) / p)
}
