//! Parametric warping families: the family interface with x- and
//! parameter-derivatives and inverses, built-in location/scale families, and
//! per-group parameter vectors with identifiability anchoring.

use crate::error::{Error, Result};

/// A parametric family of strictly increasing deformations `x -> phi_lam(x)`.
///
/// Contract for implementors: for every `lam` inside [`param_box`] and `x`
/// inside [`domain`], `deriv_x(lam, x) > 0`, the family is C^2 in `lam`, and
/// `inverse` (when provided) satisfies `value(lam, inverse(lam, y)) = y`.
pub trait DeformationFamily: Send + Sync {
    /// Stable identifier ("location", "scale", "location-scale", ...).
    fn name(&self) -> &str;

    /// Number of parameters p.
    fn param_dim(&self) -> usize;

    /// Parameters of the identity deformation; must lie inside the box.
    fn identity_params(&self) -> Vec<f64>;

    /// Compact per-coordinate bounds (lo, hi) of the parameter box.
    fn param_box(&self) -> Vec<(f64, f64)>;

    /// Open interval on which the deformations act. Defaults to all reals.
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    /// phi_lam(x).
    fn value(&self, lam: &[f64], x: f64) -> f64;

    /// d phi_lam / dx.
    fn deriv_x(&self, lam: &[f64], x: f64) -> f64;

    /// Gradient of phi_lam(x) in the parameters, written into `out` (length p).
    fn grad_params(&self, lam: &[f64], x: f64, out: &mut [f64]);

    /// Hessian of phi_lam(x) in the parameters, row-major p*p, written into `out`.
    fn hess_params(&self, lam: &[f64], x: f64, out: &mut [f64]);

    /// Closed-form inverse when available; `None` falls back to bisection.
    fn inverse(&self, lam: &[f64], y: f64) -> Option<f64> {
        let _ = (lam, y);
        None
    }
}

pub(crate) fn validate_params(fam: &dyn DeformationFamily, lam: &[f64]) -> Result<()> {
    let bounds = fam.param_box();
    if lam.len() != bounds.len() {
        return Err(Error::ParamOutOfBounds(format!(
            "expected {} parameters, got {}",
            bounds.len(),
            lam.len()
        )));
    }
    for (k, (&v, &(lo, hi))) in lam.iter().zip(&bounds).enumerate() {
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::ParamOutOfBounds(format!(
                "coordinate {k} = {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn validate_point(fam: &dyn DeformationFamily, x: f64) -> Result<()> {
    let (c, d) = fam.domain();
    if !x.is_finite() || x <= c || x >= d {
        return Err(Error::domain(format!("x = {x} outside the domain ({c}, {d})")));
    }
    Ok(())
}

/// phi_lam(x) with parameter-box and domain checks.
pub fn warp_value(fam: &dyn DeformationFamily, lam: &[f64], x: f64) -> Result<f64> {
    validate_params(fam, lam)?;
    validate_point(fam, x)?;
    Ok(fam.value(lam, x))
}

/// All derivatives of the warp at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpJacobians {
    /// d phi / dx.
    pub dx: f64,
    /// Gradient in the parameters, length p.
    pub dparams: Vec<f64>,
    /// Hessian in the parameters, row-major p*p.
    pub d2params: Vec<f64>,
}

/// Analytic x- and parameter-derivatives with the same checks as [`warp_value`].
pub fn warp_jacobians(fam: &dyn DeformationFamily, lam: &[f64], x: f64) -> Result<WarpJacobians> {
    validate_params(fam, lam)?;
    validate_point(fam, x)?;
    let p = fam.param_dim();
    let mut dparams = vec![0.0; p];
    let mut d2params = vec![0.0; p * p];
    fam.grad_params(lam, x, &mut dparams);
    fam.hess_params(lam, x, &mut d2params);
    Ok(WarpJacobians {
        dx: fam.deriv_x(lam, x),
        dparams,
        d2params,
    })
}

/// Residual tolerance accepted by the bisection inverse.
const INVERSE_TOL: f64 = 1e-10;

/// Solves phi_lam(x) = y, using the closed form when the family provides one
/// and monotone bisection otherwise.
pub fn inverse_warp(fam: &dyn DeformationFamily, lam: &[f64], y: f64) -> Result<f64> {
    validate_params(fam, lam)?;
    if !y.is_finite() {
        return Err(Error::RangeError(format!("target {y} is not finite")));
    }
    if let Some(x) = fam.inverse(lam, y) {
        return Ok(x);
    }
    bisect_inverse(fam, lam, y)
}

fn bisect_inverse(fam: &dyn DeformationFamily, lam: &[f64], y: f64) -> Result<f64> {
    let (c, d) = fam.domain();
    // Expand a bracket [lo, hi] with phi(lo) <= y <= phi(hi); the warp is
    // increasing, so doubling the width must eventually cover y unless y is
    // outside the range over the domain.
    let mid = if c.is_finite() && d.is_finite() {
        0.5 * (c + d)
    } else {
        0.0_f64.clamp(c.max(-1e100), d.min(1e100))
    };
    let clamp_lo = |v: f64| if c.is_finite() { v.max(c + 1e-300) } else { v };
    let clamp_hi = |v: f64| if d.is_finite() { v.min(d - 1e-300) } else { v };
    let mut width = 1.0;
    let mut lo = clamp_lo(mid - width);
    let mut hi = clamp_hi(mid + width);
    for _ in 0..200 {
        if fam.value(lam, lo) <= y && y <= fam.value(lam, hi) {
            break;
        }
        width *= 2.0;
        lo = clamp_lo(mid - width);
        hi = clamp_hi(mid + width);
    }
    if !(fam.value(lam, lo) <= y && y <= fam.value(lam, hi)) {
        return Err(Error::RangeError(format!(
            "{y} is outside the warp range over ({c}, {d})"
        )));
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if fam.value(lam, m) < y {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo <= f64::EPSILON * (1.0 + hi.abs()) {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    let residual = (fam.value(lam, x) - y).abs();
    if residual > INVERSE_TOL * (1.0 + y.abs()) {
        return Err(Error::RangeError(format!(
            "bisection residual {residual} exceeds tolerance at y = {y}"
        )));
    }
    Ok(x)
}

/// Default probe interval used when the family's domain is unbounded.
pub const DEFAULT_MONOTONE_PROBE: (f64, f64) = (-10.0, 10.0);

/// Checks d phi/dx > 0 at `grid_size` equispaced points of the domain,
/// falling back to [`DEFAULT_MONOTONE_PROBE`] when the domain is unbounded.
/// A zero-size grid is vacuously true.
pub fn check_monotone(fam: &dyn DeformationFamily, lam: &[f64], grid_size: usize) -> Result<bool> {
    let (c, d) = fam.domain();
    let (lo, hi) = if c.is_finite() && d.is_finite() {
        (c, d)
    } else {
        DEFAULT_MONOTONE_PROBE
    };
    check_monotone_on(fam, lam, grid_size, lo, hi)
}

/// [`check_monotone`] over an explicit probe interval.
pub fn check_monotone_on(
    fam: &dyn DeformationFamily,
    lam: &[f64],
    grid_size: usize,
    lo: f64,
    hi: f64,
) -> Result<bool> {
    validate_params(fam, lam)?;
    if grid_size == 0 {
        return Ok(true);
    }
    for k in 0..grid_size {
        // Strictly interior points: the domain is open.
        let t = (k as f64 + 0.5) / grid_size as f64;
        let x = lo + t * (hi - lo);
        if fam.deriv_x(lam, x) <= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Location family phi_a(x) = x + a.
#[derive(Debug, Clone)]
pub struct LocationFamily {
    lo: f64,
    hi: f64,
}

impl LocationFamily {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!("invalid location box [{lo}, {hi}]")));
        }
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(Error::domain(
                "location box must contain the identity offset 0".to_string(),
            ));
        }
        Ok(LocationFamily { lo, hi })
    }
}

impl Default for LocationFamily {
    fn default() -> Self {
        LocationFamily { lo: -10.0, hi: 10.0 }
    }
}

impl DeformationFamily for LocationFamily {
    fn name(&self) -> &str {
        "location"
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn identity_params(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi)]
    }
    fn value(&self, lam: &[f64], x: f64) -> f64 {
        x + lam[0]
    }
    fn deriv_x(&self, _lam: &[f64], _x: f64) -> f64 {
        1.0
    }
    fn grad_params(&self, _lam: &[f64], _x: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn hess_params(&self, _lam: &[f64], _x: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn inverse(&self, lam: &[f64], y: f64) -> Option<f64> {
        Some(y - lam[0])
    }
}

/// Scale family phi_b(x) = b x with b > 0.
#[derive(Debug, Clone)]
pub struct ScaleFamily {
    lo: f64,
    hi: f64,
}

impl ScaleFamily {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::domain(format!(
                "scale box [{lo}, {hi}] must be finite with lo > 0"
            )));
        }
        if !(lo <= 1.0 && 1.0 <= hi) {
            return Err(Error::domain(
                "scale box must contain the identity factor 1".to_string(),
            ));
        }
        Ok(ScaleFamily { lo, hi })
    }
}

impl Default for ScaleFamily {
    fn default() -> Self {
        ScaleFamily { lo: 0.1, hi: 10.0 }
    }
}

impl DeformationFamily for ScaleFamily {
    fn name(&self) -> &str {
        "scale"
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn identity_params(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi)]
    }
    fn value(&self, lam: &[f64], x: f64) -> f64 {
        lam[0] * x
    }
    fn deriv_x(&self, lam: &[f64], _x: f64) -> f64 {
        lam[0]
    }
    fn grad_params(&self, _lam: &[f64], x: f64, out: &mut [f64]) {
        out[0] = x;
    }
    fn hess_params(&self, _lam: &[f64], _x: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn inverse(&self, lam: &[f64], y: f64) -> Option<f64> {
        Some(y / lam[0])
    }
}

/// Location-scale family phi_(a,b)(x) = a + b x with b > 0.
#[derive(Debug, Clone)]
pub struct LocationScaleFamily {
    a: (f64, f64),
    b: (f64, f64),
}

impl LocationScaleFamily {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Result<Self> {
        LocationFamily::new(a.0, a.1)?;
        ScaleFamily::new(b.0, b.1)?;
        Ok(LocationScaleFamily { a, b })
    }
}

impl Default for LocationScaleFamily {
    fn default() -> Self {
        LocationScaleFamily {
            a: (-10.0, 10.0),
            b: (0.1, 10.0),
        }
    }
}

impl DeformationFamily for LocationScaleFamily {
    fn name(&self) -> &str {
        "location-scale"
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn identity_params(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        vec![self.a, self.b]
    }
    fn value(&self, lam: &[f64], x: f64) -> f64 {
        lam[0] + lam[1] * x
    }
    fn deriv_x(&self, lam: &[f64], _x: f64) -> f64 {
        lam[1]
    }
    fn grad_params(&self, _lam: &[f64], x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = x;
    }
    fn hess_params(&self, _lam: &[f64], _x: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn inverse(&self, lam: &[f64], y: f64) -> Option<f64> {
        Some((y - lam[0]) / lam[1])
    }
}

/// Per-group warp parameters, optionally with one group anchored to the
/// identity to remove the common-deformation non-identifiability.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    params: Vec<Vec<f64>>,
    anchor: Option<usize>,
}

impl ThetaVector {
    /// Unanchored parameter vector; every group's parameters must lie in the box.
    pub fn new(params: Vec<Vec<f64>>, fam: &dyn DeformationFamily) -> Result<Self> {
        Self::build(params, None, fam)
    }

    /// Anchored parameter vector: group `anchor` is pinned to the identity
    /// parameters and excluded from optimization.
    pub fn anchored(
        params: Vec<Vec<f64>>,
        anchor: usize,
        fam: &dyn DeformationFamily,
    ) -> Result<Self> {
        Self::build(params, Some(anchor), fam)
    }

    fn build(
        params: Vec<Vec<f64>>,
        anchor: Option<usize>,
        fam: &dyn DeformationFamily,
    ) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::domain("theta needs at least one group".to_string()));
        }
        for group in &params {
            validate_params(fam, group)?;
        }
        if let Some(a) = anchor {
            if a >= params.len() {
                return Err(Error::domain(format!(
                    "anchor group {a} out of range for {} groups",
                    params.len()
                )));
            }
            if params[a] != fam.identity_params() {
                return Err(Error::ParamOutOfBounds(format!(
                    "anchored group {a} must hold the identity parameters"
                )));
            }
        }
        Ok(ThetaVector { params, anchor })
    }

    /// The identity configuration for `j` groups.
    pub fn identity(j: usize, anchor: Option<usize>, fam: &dyn DeformationFamily) -> Result<Self> {
        Self::build(vec![fam.identity_params(); j], anchor, fam)
    }

    pub fn num_groups(&self) -> usize {
        self.params.len()
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.params[j]
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn anchor(&self) -> Option<usize> {
        self.anchor
    }

    /// Indices of the groups whose parameters are optimized.
    pub fn free_groups(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&g| Some(g) != self.anchor)
            .collect()
    }

    /// Non-anchored parameters flattened in group order.
    pub fn free_flat(&self) -> Vec<f64> {
        self.free_groups()
            .into_iter()
            .flat_map(|g| self.params[g].iter().copied())
            .collect()
    }

    /// Rebuilds a full vector from flattened free coordinates, keeping the
    /// anchored group fixed.
    pub fn with_free_flat(&self, free: &[f64]) -> ThetaVector {
        let p = self.params[0].len();
        let mut params = self.params.clone();
        for (slot, g) in self.free_groups().into_iter().enumerate() {
            params[g].copy_from_slice(&free[slot * p..(slot + 1) * p]);
        }
        ThetaVector {
            params,
            anchor: self.anchor,
        }
    }
}
