//! Parameter estimation with a plug-in curvature matrix, and Monte Carlo
//! simulators for the limiting laws of the minimized criterion built from
//! Brownian bridges.

use crate::criterion::{default_start_grid, minimize_u_n, phi_hessian, MinimizeOptions};
use crate::deformation::{DeformationFamily, ThetaVector};
use crate::empirical::SampleSet;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Relative eigenvalue floor below which a curvature matrix counts as
/// singular.
const SINGULAR_REL_TOL: f64 = 1e-9;

/// Curvature matrix of the criterion with its identifiable reduction.
///
/// `full` is the complete (J·p)x(J·p) matrix; `anchored` drops the anchored
/// group's block of rows and columns, which restores invertibility when the
/// only flat direction is the common-deformation one.
#[derive(Debug, Clone)]
pub struct PhiMatrix {
    full: DMatrix<f64>,
    anchored: Option<DMatrix<f64>>,
    invertible: bool,
}

fn drop_block(m: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.nrows())
        .filter(|&i| i < start || i >= start + len)
        .collect();
    DMatrix::from_fn(keep.len(), keep.len(), |a, b| m[(keep[a], keep[b])])
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
}

impl PhiMatrix {
    /// Wraps a full curvature matrix, validating symmetry and positive
    /// semidefiniteness, and reducing out the anchored group's block when an
    /// anchor is given. `param_dim` is the per-group parameter count p.
    pub fn from_full(
        full: DMatrix<f64>,
        anchor: Option<usize>,
        param_dim: usize,
    ) -> Result<Self> {
        if full.nrows() != full.ncols() {
            return Err(Error::domain("curvature matrix must be square".to_string()));
        }
        if param_dim == 0 || full.nrows() % param_dim != 0 {
            return Err(Error::domain(format!(
                "matrix size {} is not a multiple of param_dim {param_dim}",
                full.nrows()
            )));
        }
        let scale = full.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for a in 0..full.nrows() {
            for b in (a + 1)..full.ncols() {
                if (full[(a, b)] - full[(b, a)]).abs() > 1e-10 * scale {
                    return Err(Error::domain(format!(
                        "curvature matrix asymmetric at ({a}, {b})"
                    )));
                }
            }
        }
        let eigs = sym_eigenvalues(&full);
        let max_eig = eigs.iter().fold(0.0_f64, |m, &l| m.max(l.abs()));
        if eigs.iter().any(|&l| l < -1e-10 * max_eig.max(1.0)) {
            return Err(Error::domain(
                "curvature matrix is not positive semidefinite".to_string(),
            ));
        }
        let anchored = match anchor {
            Some(a) => {
                let groups = full.nrows() / param_dim;
                if a >= groups {
                    return Err(Error::domain(format!(
                        "anchor group {a} out of range for {groups} groups"
                    )));
                }
                Some(drop_block(&full, a * param_dim, param_dim))
            }
            None => None,
        };
        let eff = anchored.as_ref().unwrap_or(&full);
        let eff_eigs = sym_eigenvalues(eff);
        let eff_max = eff_eigs.iter().fold(0.0_f64, |m, &l| m.max(l.abs()));
        let invertible = !eff_eigs.is_empty()
            && eff_eigs.iter().all(|&l| l.abs() > SINGULAR_REL_TOL * eff_max.max(1e-300));
        Ok(PhiMatrix {
            full,
            anchored,
            invertible,
        })
    }

    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }

    pub fn anchored(&self) -> Option<&DMatrix<f64>> {
        self.anchored.as_ref()
    }

    /// The matrix inference works with: the anchored reduction when present,
    /// the full matrix otherwise.
    pub fn effective(&self) -> &DMatrix<f64> {
        self.anchored.as_ref().unwrap_or(&self.full)
    }

    pub fn invertible(&self) -> bool {
        self.invertible
    }

    /// Inverse of the effective matrix.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        if !self.invertible {
            return Err(Error::SingularPhi);
        }
        invert_symmetric(self.effective())
    }
}

fn invert_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |mx, &l| mx.max(l.abs()));
    if eig
        .eigenvalues
        .iter()
        .any(|&l| l.abs() <= SINGULAR_REL_TOL * max_eig.max(1e-300))
    {
        return Err(Error::SingularPhi);
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// Which group, if any, is pinned to the identity for identifiability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorChoice {
    /// Pin the last group (the default for location/scale-type families).
    LastGroup,
    /// Pin a specific group index.
    Group(usize),
    /// No anchoring; the curvature matrix is then typically singular.
    Unanchored,
}

/// Options for [`estimate`].
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub anchor: AnchorChoice,
    /// Start points; `None` uses [`default_start_grid`].
    pub starts: Option<Vec<ThetaVector>>,
    pub minimize: MinimizeOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            anchor: AnchorChoice::LastGroup,
            starts: None,
            minimize: MinimizeOptions::default(),
        }
    }
}

/// Parameter estimate with its plug-in curvature matrix.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub theta_hat: ThetaVector,
    /// Minimized criterion value.
    pub value: f64,
    /// Curvature at `theta_hat` with the anchored reduction applied.
    pub phi: PhiMatrix,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
}

/// Estimates the warp parameters by minimizing the criterion, then evaluates
/// the curvature matrix at the estimate. A non-converged optimizer still
/// reports its best point with `converged = false`; only a run with no
/// evaluable start fails, as [`Error::EstimationFailed`].
pub fn estimate(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    options: &EstimateOptions,
) -> Result<EstimateResult> {
    if data.equal_n().is_none() {
        return Err(Error::UnequalSampleSizes(
            "estimate requires equal group sizes".to_string(),
        ));
    }
    let j = data.num_groups();
    let anchor = match options.anchor {
        AnchorChoice::LastGroup => Some(j - 1),
        AnchorChoice::Group(a) => {
            if a >= j {
                return Err(Error::domain(format!(
                    "anchor group {a} out of range for {j} groups"
                )));
            }
            Some(a)
        }
        AnchorChoice::Unanchored => None,
    };
    let starts = match &options.starts {
        Some(s) => s.clone(),
        None => default_start_grid(fam, j, anchor)?,
    };
    for s in &starts {
        if s.num_groups() != j || s.anchor() != anchor {
            return Err(Error::domain(
                "start points must match the data's group count and the requested anchor"
                    .to_string(),
            ));
        }
    }
    let min = minimize_u_n(data, fam, &starts, &options.minimize).map_err(|e| match e {
        Error::NoStartPoint => {
            Error::EstimationFailed("no start point could be evaluated".to_string())
        }
        other => other,
    })?;
    let hess = phi_hessian(data, fam, &min.theta_hat)?;
    let phi = PhiMatrix::from_full(hess, anchor, fam.param_dim())?;
    Ok(EstimateResult {
        theta_hat: min.theta_hat,
        value: min.value,
        phi,
        converged: min.converged,
        iterations: min.iterations,
        restarts_used: min.restarts_used,
    })
}

/// One Brownian bridge sampled on the interior grid k/(K+1), k = 1..K.
/// The implied values at t = 0 and t = 1 are zero.
#[derive(Debug, Clone)]
pub struct BridgePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Interior grid points t_k = k/(K+1) and trapezoid weights for integration
/// over [t_1, t_K].
fn interior_grid(k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 {
        return Err(Error::domain("bridge grid needs at least one point".to_string()));
    }
    let h = 1.0 / (k as f64 + 1.0);
    let times: Vec<f64> = (1..=k).map(|i| i as f64 * h).collect();
    let mut weights = vec![h; k];
    if k == 1 {
        weights[0] = 0.0;
    } else {
        weights[0] = 0.5 * h;
        weights[k - 1] = 0.5 * h;
    }
    Ok((times, weights))
}

fn sample_bridge_values<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    // Random-walk construction: W(t_i) via scaled Gaussian increments, then
    // B(t) = W(t) - t W(1) using one extra increment up to t = 1.
    let step = (1.0 / (k as f64 + 1.0)).sqrt();
    let mut walk = Vec::with_capacity(k);
    let mut w = 0.0;
    for _ in 0..k {
        w += step * rng.sample::<f64, _>(StandardNormal);
        walk.push(w);
    }
    let w1 = w + step * rng.sample::<f64, _>(StandardNormal);
    for (i, v) in walk.iter_mut().enumerate() {
        let t = (i as f64 + 1.0) / (k as f64 + 1.0);
        *v -= t * w1;
    }
    walk
}

/// Samples one Brownian bridge on the interior grid of size `k`.
pub fn brownian_bridge_path<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<BridgePath> {
    let (times, _) = interior_grid(k)?;
    let values = sample_bridge_values(k, rng);
    Ok(BridgePath { times, values })
}

/// A scalar function of the quantile level t in (0, 1).
pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// One candidate deformation profile entering the general limit law: the
/// warped quantiles t -> phi_j(F_j^{-1}(t)), the warp slopes
/// t -> phi_j'(F_j^{-1}(t)), and the barycenter quantile of the warped
/// measures for this candidate.
pub struct LimitCandidate {
    pub warped_quantile: Vec<ScalarFn>,
    pub warp_deriv: Vec<ScalarFn>,
    pub barycenter: ScalarFn,
}

/// Inputs for [`simulate_limit_general`]: per-group densities evaluated
/// along their own quantiles, plus a finite set of candidate profiles whose
/// minimum forms each draw.
pub struct GeneralLimitModel {
    pub density_at_quantile: Vec<ScalarFn>,
    pub candidates: Vec<LimitCandidate>,
}

/// Per-candidate, per-group trapezoid-folded integrand tables.
struct GeneralTables {
    /// coef[c][j][i]: everything multiplying B_j(t_i) in candidate c's value.
    coef: Vec<Vec<Vec<f64>>>,
    groups: usize,
    grid: usize,
}

fn build_general_tables(model: &GeneralLimitModel, k: usize) -> Result<GeneralTables> {
    let j = model.density_at_quantile.len();
    if j == 0 {
        return Err(Error::EmptyCollection);
    }
    if model.candidates.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let (times, weights) = interior_grid(k)?;
    let jf = j as f64;
    let mut dens = vec![vec![0.0; k]; j];
    for (g, f) in model.density_at_quantile.iter().enumerate() {
        for (i, &t) in times.iter().enumerate() {
            let v = f(t);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::DensityError(format!(
                    "group {g} density at level {t} is {v}"
                )));
            }
            dens[g][i] = v;
        }
    }
    let mut coef = Vec::with_capacity(model.candidates.len());
    for (c, cand) in model.candidates.iter().enumerate() {
        if cand.warped_quantile.len() != j || cand.warp_deriv.len() != j {
            return Err(Error::domain(format!(
                "candidate {c} does not describe all {j} groups"
            )));
        }
        let mut per_group = Vec::with_capacity(j);
        for g in 0..j {
            let mut row = Vec::with_capacity(k);
            for (i, &t) in times.iter().enumerate() {
                let slope = cand.warp_deriv[g](t);
                let gap = cand.warped_quantile[g](t) - (cand.barycenter)(t);
                let v = (2.0 / jf) * weights[i] * slope * gap / dens[g][i];
                if !v.is_finite() {
                    return Err(Error::DensityError(format!(
                        "candidate {c} integrand for group {g} at level {t} is not finite"
                    )));
                }
                row.push(v);
            }
            per_group.push(row);
        }
        coef.push(per_group);
    }
    Ok(GeneralTables {
        coef,
        groups: j,
        grid: k,
    })
}

fn general_draw(tables: &GeneralTables, bridges: &[Vec<f64>]) -> f64 {
    tables
        .coef
        .iter()
        .map(|cand| {
            let mut acc = 0.0;
            for (g, row) in cand.iter().enumerate() {
                let b = &bridges[g];
                for i in 0..row.len() {
                    acc += row[i] * b[i];
                }
            }
            acc
        })
        .fold(f64::INFINITY, f64::min)
}

/// Draws from a limit law together with optional per-draw decompositions.
#[derive(Debug, Clone)]
pub struct LimitLawSample {
    pub draws: Vec<f64>,
    pub components: Option<Vec<LimitDrawComponents>>,
}

/// Decomposition of one null-limit draw: the draw equals
/// `first_term - correction / 2` with `correction` the quadratic form
/// Y'Phi^{-1}Y (zero when the score functions vanish).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitDrawComponents {
    pub first_term: f64,
    pub correction: f64,
}

/// Simulates the limit law of the root-n-scaled criterion at a fixed set of
/// candidate profiles: per draw, J independent Brownian bridges are combined
/// into each candidate's linear functional by trapezoid integration on the
/// interior grid, and the draw is the minimum over candidates. Deterministic
/// in `master_seed` regardless of thread count.
pub fn simulate_limit_general(
    model: &GeneralLimitModel,
    k: usize,
    n_draws: usize,
    master_seed: u64,
) -> Result<LimitLawSample> {
    let tables = build_general_tables(model, k)?;
    let draws: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, d as u64));
            let bridges: Vec<Vec<f64>> = (0..tables.groups)
                .map(|_| sample_bridge_values(tables.grid, &mut rng))
                .collect();
            general_draw(&tables, &bridges)
        })
        .collect();
    Ok(LimitLawSample {
        draws,
        components: None,
    })
}

/// Inputs for [`simulate_limit_null`]: per-group score functions
/// t -> R_j(G^{-1}(t)) (one inner vector of coordinates per group, all of
/// length p) and the template density along its quantile t -> g(G^{-1}(t)).
/// `anchor` names the group whose block is absent from the reduced curvature
/// matrix.
pub struct NullLimitModel {
    pub r_at_template_quantile: Vec<Vec<ScalarFn>>,
    pub template_density_at_quantile: ScalarFn,
    pub anchor: Option<usize>,
}

struct NullTables {
    /// weights[i] / g(G^{-1}(t_i)) precomputed per grid point.
    w_over_g: Vec<f64>,
    /// g values for the squared first term: weights[i] / g^2.
    w_over_g2: Vec<f64>,
    /// r[slot][coord][i] for free groups in order.
    r: Vec<Vec<Vec<f64>>>,
    free: Vec<usize>,
    groups: usize,
    grid: usize,
    inv: Option<DMatrix<f64>>,
}

fn build_null_tables(
    model: &NullLimitModel,
    phi_tilde: &DMatrix<f64>,
    k: usize,
) -> Result<NullTables> {
    let j = model.r_at_template_quantile.len();
    if j < 2 {
        return Err(Error::domain(
            "null limit law needs at least two groups".to_string(),
        ));
    }
    let p = model.r_at_template_quantile[0].len();
    if model
        .r_at_template_quantile
        .iter()
        .any(|coords| coords.len() != p)
    {
        return Err(Error::domain(
            "all groups must have the same score dimension".to_string(),
        ));
    }
    if let Some(a) = model.anchor {
        if a >= j {
            return Err(Error::domain(format!(
                "anchor group {a} out of range for {j} groups"
            )));
        }
    }
    let free: Vec<usize> = (0..j).filter(|&g| Some(g) != model.anchor).collect();
    let dim = free.len() * p;
    if phi_tilde.nrows() != dim || phi_tilde.ncols() != dim {
        return Err(Error::domain(format!(
            "curvature matrix is {}x{}, expected {dim}x{dim}",
            phi_tilde.nrows(),
            phi_tilde.ncols()
        )));
    }
    let (times, weights) = interior_grid(k)?;
    let mut w_over_g = Vec::with_capacity(k);
    let mut w_over_g2 = Vec::with_capacity(k);
    for (i, &t) in times.iter().enumerate() {
        let g = (model.template_density_at_quantile)(t);
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::DensityError(format!(
                "template density at level {t} is {g}"
            )));
        }
        w_over_g.push(weights[i] / g);
        w_over_g2.push(weights[i] / (g * g));
    }
    let mut r = Vec::with_capacity(free.len());
    let mut all_zero = true;
    for &g in &free {
        let mut per_coord = Vec::with_capacity(p);
        for f in &model.r_at_template_quantile[g] {
            let mut row = Vec::with_capacity(k);
            for &t in &times {
                let v = f(t);
                if !v.is_finite() {
                    return Err(Error::domain(format!(
                        "score of group {g} at level {t} is not finite"
                    )));
                }
                if v != 0.0 {
                    all_zero = false;
                }
                row.push(v);
            }
            per_coord.push(row);
        }
        r.push(per_coord);
    }
    let inv = match invert_symmetric(phi_tilde) {
        Ok(m) => Some(m),
        // Vanishing scores make the correction zero regardless of the
        // curvature matrix; anything else genuinely needs the inverse.
        Err(Error::SingularPhi) if all_zero => None,
        Err(e) => return Err(e),
    };
    Ok(NullTables {
        w_over_g,
        w_over_g2,
        r,
        free,
        groups: j,
        grid: k,
        inv,
    })
}

fn centered_bridges(bridges: &mut [Vec<f64>]) {
    let j = bridges.len() as f64;
    let k = bridges[0].len();
    for i in 0..k {
        let mut mean = 0.0;
        for b in bridges.iter() {
            mean += b[i];
        }
        mean /= j;
        for b in bridges.iter_mut() {
            b[i] -= mean;
        }
    }
}

fn null_draw(tables: &NullTables, centered: &[Vec<f64>]) -> LimitDrawComponents {
    let jf = tables.groups as f64;
    let mut first = 0.0;
    for b in centered {
        for i in 0..tables.grid {
            first += tables.w_over_g2[i] * b[i] * b[i];
        }
    }
    first /= jf;
    let correction = match &tables.inv {
        Some(inv) => {
            let p = tables.r.first().map_or(0, |c| c.len());
            let mut y = DVector::zeros(tables.free.len() * p);
            for (slot, &g) in tables.free.iter().enumerate() {
                let b = &centered[g];
                for (c, row) in tables.r[slot].iter().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..tables.grid {
                        acc += tables.w_over_g[i] * row[i] * b[i];
                    }
                    y[slot * p + c] = (2.0 / jf) * acc;
                }
            }
            (inv * &y).dot(&y)
        }
        None => 0.0,
    };
    LimitDrawComponents {
        first_term: first,
        correction,
    }
}

/// Simulates the null limit law of n·inf U_n: per draw, J independent
/// bridges are centered across groups, the nonnegative first term
/// (1/J) Σ_j ∫ (B̃_j / g∘G^{-1})² is computed, and the quadratic correction
/// Y'Φ̃^{-1}Y built from the score functions is subtracted with weight 1/2.
/// A singular curvature matrix is only tolerated when every score vanishes
/// identically (the correction is then zero); otherwise the error is
/// [`Error::SingularPhi`].
pub fn simulate_limit_null(
    model: &NullLimitModel,
    phi_tilde: &DMatrix<f64>,
    k: usize,
    n_draws: usize,
    master_seed: u64,
) -> Result<LimitLawSample> {
    let tables = build_null_tables(model, phi_tilde, k)?;
    let per_draw: Vec<LimitDrawComponents> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, d as u64));
            let mut bridges: Vec<Vec<f64>> = (0..tables.groups)
                .map(|_| sample_bridge_values(tables.grid, &mut rng))
                .collect();
            centered_bridges(&mut bridges);
            null_draw(&tables, &bridges)
        })
        .collect();
    let draws = per_draw
        .iter()
        .map(|c| c.first_term - 0.5 * c.correction)
        .collect();
    Ok(LimitLawSample {
        draws,
        components: Some(per_draw),
    })
}

/// Draws from the limit distribution of the centered, root-n-scaled
/// parameter estimate: per draw the vector Φ̃^{-1}Ỹ, whose covariance is the
/// asymptotic covariance of √n(θ̂ - θ*) over the free groups.
pub fn simulate_theta_limit(
    model: &NullLimitModel,
    phi_tilde: &DMatrix<f64>,
    k: usize,
    n_draws: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let tables = build_null_tables(model, phi_tilde, k)?;
    let inv = match &tables.inv {
        Some(m) => m.clone(),
        None => return Err(Error::SingularPhi),
    };
    let p = tables.r.first().map_or(0, |c| c.len());
    Ok((0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, d as u64));
            let mut bridges: Vec<Vec<f64>> = (0..tables.groups)
                .map(|_| sample_bridge_values(tables.grid, &mut rng))
                .collect();
            centered_bridges(&mut bridges);
            let jf = tables.groups as f64;
            let mut y = DVector::zeros(tables.free.len() * p);
            for (slot, &g) in tables.free.iter().enumerate() {
                let b = &bridges[g];
                for (c, row) in tables.r[slot].iter().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..tables.grid {
                        acc += tables.w_over_g[i] * row[i] * b[i];
                    }
                    y[slot * p + c] = (2.0 / jf) * acc;
                }
            }
            (&inv * y).iter().copied().collect()
        })
        .collect())
}

/// Builds the population curvature matrix from score functions evaluated
/// along the template quantile: off-diagonal blocks
/// -(2/J²) ∫ R_q ⊗ R_r, diagonal blocks (2(J-1)/J²) ∫ R_q ⊗ R_q, with the
/// integrals taken over the full unit interval by the trapezoid rule on a
/// (k+1)-point grid.
pub fn phi_from_r_quantile(r: &[Vec<ScalarFn>], k: usize) -> Result<DMatrix<f64>> {
    let j = r.len();
    if j == 0 {
        return Err(Error::EmptyCollection);
    }
    let p = r[0].len();
    if r.iter().any(|coords| coords.len() != p) {
        return Err(Error::domain(
            "all groups must have the same score dimension".to_string(),
        ));
    }
    if k == 0 {
        return Err(Error::domain("quadrature grid needs k >= 1".to_string()));
    }
    // Full-interval trapezoid grid 0, 1/k, ..., 1.
    let h = 1.0 / k as f64;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * h).collect();
    let mut weights = vec![h; k + 1];
    weights[0] = 0.5 * h;
    weights[k] = 0.5 * h;
    let mut tables = vec![vec![vec![0.0; k + 1]; p]; j];
    for (g, coords) in r.iter().enumerate() {
        for (c, f) in coords.iter().enumerate() {
            for (i, &t) in times.iter().enumerate() {
                let v = f(t);
                if !v.is_finite() {
                    return Err(Error::domain(format!(
                        "score of group {g} at level {t} is not finite"
                    )));
                }
                tables[g][c][i] = v;
            }
        }
    }
    let jf = j as f64;
    let mut out = DMatrix::zeros(j * p, j * p);
    for q in 0..j {
        for rr in q..j {
            for a in 0..p {
                for b in 0..p {
                    let mut acc = 0.0;
                    for i in 0..=k {
                        acc += weights[i] * tables[q][a][i] * tables[rr][b][i];
                    }
                    let v = if q == rr {
                        2.0 * (jf - 1.0) / (jf * jf) * acc
                    } else {
                        -2.0 / (jf * jf) * acc
                    };
                    out[(q * p + a, rr * p + b)] = v;
                    if q != rr {
                        out[(rr * p + b, q * p + a)] = v;
                    }
                }
            }
        }
    }
    // Exact symmetry of the diagonal blocks: mirror the strict upper part.
    for q in 0..j {
        for a in 0..p {
            for b in (a + 1)..p {
                let v = 0.5 * (out[(q * p + a, q * p + b)] + out[(q * p + b, q * p + a)]);
                out[(q * p + a, q * p + b)] = v;
                out[(q * p + b, q * p + a)] = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::LocationFamily;
    use crate::empirical::Sample;
    use approx::assert_abs_diff_eq;

    fn const_fn(v: f64) -> ScalarFn {
        Box::new(move |_| v)
    }

    #[test]
    fn phi_matrix_anchored_location() {
        // Full location-family curvature for J=3 with R == 1.
        let j = 3;
        let jf = j as f64;
        let full = DMatrix::from_fn(j, j, |a, b| {
            if a == b {
                2.0 * (jf - 1.0) / (jf * jf)
            } else {
                -2.0 / (jf * jf)
            }
        });
        let phi = PhiMatrix::from_full(full.clone(), Some(2), 1).unwrap();
        assert!(!PhiMatrix::from_full(full, None, 1).unwrap().invertible());
        assert!(phi.invertible());
        let eff = phi.effective();
        assert_eq!(eff.nrows(), 2);
        assert_abs_diff_eq!(eff[(0, 0)], 4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eff[(0, 1)], -2.0 / 9.0, epsilon = 1e-15);
        let inv = phi.inverse().unwrap();
        let id = eff * &inv;
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id[(a, b)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn phi_matrix_rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(PhiMatrix::from_full(m, None, 1).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(PhiMatrix::from_full(neg, None, 1).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(PhiMatrix::from_full(ok.clone(), None, 3).is_err());
        let singular = PhiMatrix::from_full(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            None,
            1,
        )
        .unwrap();
        assert!(matches!(singular.inverse(), Err(Error::SingularPhi)));
        assert!(PhiMatrix::from_full(ok, Some(5), 1).is_err());
    }

    #[test]
    fn estimate_recovers_shift_and_phi() {
        let data = SampleSet::new(vec![
            Sample::new(vec![1.0, 3.0]).unwrap(),
            Sample::new(vec![0.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let loc = LocationFamily::default();
        let res = estimate(&data, &loc, &EstimateOptions::default()).unwrap();
        assert_abs_diff_eq!(res.theta_hat.group(0)[0], -1.0, epsilon = 1e-4);
        assert_eq!(res.theta_hat.group(1), &[0.0]);
        assert!(res.value <= 1e-8);
        assert!(res.phi.invertible());
        assert_abs_diff_eq!(res.phi.effective()[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn estimate_requires_equal_sizes() {
        let data = SampleSet::new(vec![
            Sample::new(vec![1.0, 3.0]).unwrap(),
            Sample::new(vec![0.0, 2.0, 4.0]).unwrap(),
        ])
        .unwrap();
        let loc = LocationFamily::default();
        assert!(matches!(
            estimate(&data, &loc, &EstimateOptions::default()),
            Err(Error::UnequalSampleSizes(_))
        ));
    }

    #[test]
    fn bridge_grid_and_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let path = brownian_bridge_path(3, &mut rng).unwrap();
        assert_eq!(path.times, vec![0.25, 0.5, 0.75]);
        assert_eq!(path.values.len(), 3);
        assert!(brownian_bridge_path(0, &mut rng).is_err());
    }

    #[test]
    fn bridge_moments_small_grid() {
        // Exact finite-grid covariance of the construction is min(s,t)-st.
        let reps = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut sum_sq_mid = 0.0;
        let mut sum_cross = 0.0;
        for _ in 0..reps {
            let v = sample_bridge_values(3, &mut rng);
            sum_sq_mid += v[1] * v[1];
            sum_cross += v[0] * v[2];
        }
        let var_mid = sum_sq_mid / reps as f64;
        let cov = sum_cross / reps as f64;
        // Var B(1/2) = 1/4 (SE ~ sqrt(2)*0.25/sqrt(reps) ~ 0.0025)
        assert_abs_diff_eq!(var_mid, 0.25, epsilon = 0.01);
        // Cov(B(1/4), B(3/4)) = 1/4 - 3/16 = 1/16
        assert_abs_diff_eq!(cov, 1.0 / 16.0, epsilon = 0.01);
    }

    fn uniform_null_model(j: usize, r_value: f64, anchor: Option<usize>) -> NullLimitModel {
        NullLimitModel {
            r_at_template_quantile: (0..j).map(|_| vec![const_fn(r_value)]).collect(),
            template_density_at_quantile: const_fn(1.0),
            anchor,
        }
    }

    #[test]
    fn null_draws_zero_bridges() {
        let model = uniform_null_model(2, 1.0, Some(1));
        let phi = DMatrix::from_element(1, 1, 0.5);
        let tables = build_null_tables(&model, &phi, 16).unwrap();
        let zeros = vec![vec![0.0; 16]; 2];
        let c = null_draw(&tables, &zeros);
        assert_eq!(c.first_term, 0.0);
        assert_eq!(c.correction, 0.0);
    }

    #[test]
    fn null_zero_scores_zero_correction() {
        let model = uniform_null_model(2, 0.0, Some(1));
        // Singular curvature is fine when every score vanishes.
        let phi = DMatrix::from_element(1, 1, 0.0);
        let out = simulate_limit_null(&model, &phi, 32, 50, 11).unwrap();
        let comps = out.components.unwrap();
        assert_eq!(out.draws.len(), 50);
        for (d, c) in out.draws.iter().zip(&comps) {
            assert_eq!(c.correction, 0.0);
            assert!(c.first_term >= 0.0);
            assert_eq!(*d, c.first_term);
        }
    }

    #[test]
    fn null_singular_phi_with_nonzero_scores() {
        let model = uniform_null_model(2, 1.0, Some(1));
        let phi = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(
            simulate_limit_null(&model, &phi, 32, 5, 11),
            Err(Error::SingularPhi)
        ));
    }

    #[test]
    fn null_components_reassemble_draws() {
        let model = uniform_null_model(2, 1.0, Some(1));
        let phi = DMatrix::from_element(1, 1, 0.5);
        let out = simulate_limit_null(&model, &phi, 64, 40, 3).unwrap();
        let comps = out.components.unwrap();
        for (d, c) in out.draws.iter().zip(&comps) {
            assert!(c.first_term >= 0.0);
            assert!(c.correction >= -1e-15);
            assert_abs_diff_eq!(*d, c.first_term - 0.5 * c.correction, epsilon = 1e-15);
        }
    }

    #[test]
    fn null_deterministic_in_seed() {
        let model = uniform_null_model(3, 1.0, Some(2));
        let full = phi_from_r_quantile(
            &(0..3).map(|_| vec![const_fn(1.0)]).collect::<Vec<_>>(),
            64,
        )
        .unwrap();
        let phi = PhiMatrix::from_full(full, Some(2), 1).unwrap();
        let a = simulate_limit_null(&model, phi.effective(), 32, 20, 5).unwrap();
        let b = simulate_limit_null(&model, phi.effective(), 32, 20, 5).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = simulate_limit_null(&model, phi.effective(), 32, 20, 6).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn general_h0_draws_are_zero() {
        // Warped quantile equal to the barycenter for every group: the
        // integrand vanishes and every draw is exactly zero.
        let model = GeneralLimitModel {
            density_at_quantile: vec![const_fn(1.0), const_fn(1.0)],
            candidates: vec![LimitCandidate {
                warped_quantile: vec![Box::new(|t| t), Box::new(|t| t)],
                warp_deriv: vec![const_fn(1.0), const_fn(1.0)],
                barycenter: Box::new(|t| t),
            }],
        };
        let out = simulate_limit_general(&model, 64, 25, 9).unwrap();
        for d in out.draws {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn general_doubling_gap_doubles_draws() {
        let mk = |gap_scale: f64| GeneralLimitModel {
            density_at_quantile: vec![const_fn(1.0), const_fn(1.0)],
            candidates: vec![LimitCandidate {
                warped_quantile: vec![
                    Box::new(move |t: f64| t + gap_scale * 0.3),
                    Box::new(move |t: f64| t - gap_scale * 0.3),
                ],
                warp_deriv: vec![const_fn(1.0), const_fn(1.0)],
                barycenter: Box::new(|t| t),
            }],
        };
        let t1 = build_general_tables(&mk(1.0), 32).unwrap();
        let t2 = build_general_tables(&mk(2.0), 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bridges: Vec<Vec<f64>> = (0..2).map(|_| sample_bridge_values(32, &mut rng)).collect();
        let d1 = general_draw(&t1, &bridges);
        let d2 = general_draw(&t2, &bridges);
        assert_abs_diff_eq!(d2, 2.0 * d1, epsilon = 1e-12 * (1.0 + d1.abs()));
    }

    #[test]
    fn general_min_over_candidates() {
        // Two candidates, one with zero gap: the min must be <= 0-candidate
        // value for every bridge realization, hence every draw <= other.
        let model = GeneralLimitModel {
            density_at_quantile: vec![const_fn(1.0), const_fn(1.0)],
            candidates: vec![
                LimitCandidate {
                    warped_quantile: vec![Box::new(|t| t), Box::new(|t| t)],
                    warp_deriv: vec![const_fn(1.0), const_fn(1.0)],
                    barycenter: Box::new(|t| t),
                },
                LimitCandidate {
                    warped_quantile: vec![Box::new(|t: f64| t + 0.5), Box::new(|t: f64| t - 0.5)],
                    warp_deriv: vec![const_fn(1.0), const_fn(1.0)],
                    barycenter: Box::new(|t| t),
                },
            ],
        };
        let out = simulate_limit_general(&model, 32, 50, 2).unwrap();
        for d in out.draws {
            assert!(d <= 0.0);
        }
    }

    #[test]
    fn general_rejects_bad_density() {
        let model = GeneralLimitModel {
            density_at_quantile: vec![const_fn(0.0)],
            candidates: vec![LimitCandidate {
                warped_quantile: vec![Box::new(|t| t)],
                warp_deriv: vec![const_fn(1.0)],
                barycenter: Box::new(|t| t),
            }],
        };
        assert!(matches!(
            simulate_limit_general(&model, 16, 1, 0),
            Err(Error::DensityError(_))
        ));
        let empty = GeneralLimitModel {
            density_at_quantile: vec![const_fn(1.0)],
            candidates: vec![],
        };
        assert!(matches!(
            simulate_limit_general(&empty, 16, 1, 0),
            Err(Error::EmptyCollection)
        ));
    }

    #[test]
    fn phi_from_constant_scores_matches_analytic() {
        for j in [2usize, 3, 5] {
            let r: Vec<Vec<ScalarFn>> = (0..j).map(|_| vec![const_fn(1.0)]).collect();
            let full = phi_from_r_quantile(&r, 128).unwrap();
            let jf = j as f64;
            for a in 0..j {
                for b in 0..j {
                    let want = if a == b {
                        2.0 * (jf - 1.0) / (jf * jf)
                    } else {
                        -2.0 / (jf * jf)
                    };
                    assert_abs_diff_eq!(full[(a, b)], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn theta_limit_draws_have_expected_shape() {
        let model = uniform_null_model(2, 1.0, Some(1));
        let phi = DMatrix::from_element(1, 1, 0.5);
        let draws = simulate_theta_limit(&model, &phi, 64, 30, 77).unwrap();
        assert_eq!(draws.len(), 30);
        assert!(draws.iter().all(|d| d.len() == 1 && d[0].is_finite()));
        let singular = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(
            simulate_theta_limit(&model, &singular, 64, 3, 77),
            Err(Error::SingularPhi)
        ));
    }
}
