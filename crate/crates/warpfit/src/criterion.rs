//! The alignment criterion U_n: the mean squared Wasserstein-2 distance of
//! the warped group measures to their barycenter, with exact first and
//! second parameter derivatives and box-constrained multistart minimization.

use crate::deformation::{self, DeformationFamily, ThetaVector};
use crate::empirical::{Sample, SampleSet};
use crate::error::{Error, Result};
use crate::transport::variation2;
use nalgebra::DMatrix;
use rayon::prelude::*;

fn check_shape(data: &SampleSet, fam: &dyn DeformationFamily, theta: &ThetaVector) -> Result<()> {
    if theta.num_groups() != data.num_groups() {
        return Err(Error::domain(format!(
            "theta has {} groups, data has {}",
            theta.num_groups(),
            data.num_groups()
        )));
    }
    for j in 0..theta.num_groups() {
        deformation::validate_params(fam, theta.group(j))?;
    }
    Ok(())
}

/// Warps each group's sorted values. An increasing warp preserves order, so
/// the result per group is the sorted warped sample.
fn warp_groups(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    theta: &ThetaVector,
) -> Result<Vec<Vec<f64>>> {
    let (c, d) = fam.domain();
    let bounded = c.is_finite() || d.is_finite();
    let mut out = Vec::with_capacity(data.num_groups());
    for (j, sample) in data.groups().iter().enumerate() {
        let lam = theta.group(j);
        let mut z = Vec::with_capacity(sample.n());
        for &x in sample.values() {
            if bounded && (x <= c || x >= d) {
                return Err(Error::domain(format!(
                    "observation {x} in group {j} outside the warp domain ({c}, {d})"
                )));
            }
            let v = fam.value(lam, x);
            if !v.is_finite() {
                return Err(Error::domain(format!(
                    "warp of {x} in group {j} is not finite"
                )));
            }
            z.push(v);
        }
        out.push(z);
    }
    Ok(out)
}

fn u_n_equal(warped: &[Vec<f64>]) -> f64 {
    let j = warped.len() as f64;
    let n = warped[0].len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut mean = 0.0;
        for z in warped {
            mean += z[i];
        }
        mean /= j;
        for z in warped {
            let d = z[i] - mean;
            acc += d * d;
        }
    }
    acc / (j * n as f64)
}

/// The empirical criterion U_n(θ): warp each group, then average the squared
/// Wasserstein-2 distances from the warped empirical measures to their
/// barycenter. With equal group sizes this is the mean squared spread of the
/// per-rank order statistics across groups.
pub fn u_n(data: &SampleSet, fam: &dyn DeformationFamily, theta: &ThetaVector) -> Result<f64> {
    check_shape(data, fam, theta)?;
    let warped = warp_groups(data, fam, theta)?;
    if data.equal_n().is_some() {
        return Ok(u_n_equal(&warped));
    }
    let qs: Vec<_> = warped
        .into_iter()
        .map(|z| Sample::from_sorted_unchecked(z).quantile_fn().clone())
        .collect();
    variation2(&qs)
}

fn require_equal_n(data: &SampleSet, what: &str) -> Result<usize> {
    data.equal_n().ok_or_else(|| {
        Error::UnequalSampleSizes(format!("{what} requires equal group sizes"))
    })
}

/// Exact gradient of U_n in the full J·p parameter layout:
/// dU/dθ_{j,k} = (2/J)(1/n) Σ_i dφ_{θ_j}/dθ_k(X_(i),j) · (Z_{i,j} − Z̄_i).
/// Coordinates of an anchored group are reported as zero.
pub fn grad_u_n(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    theta: &ThetaVector,
) -> Result<Vec<f64>> {
    check_shape(data, fam, theta)?;
    let n = require_equal_n(data, "grad_u_n")?;
    let warped = warp_groups(data, fam, theta)?;
    let jn = data.num_groups();
    let p = fam.param_dim();
    let mut grad = vec![0.0; jn * p];
    let mut dlam = vec![0.0; p];
    for i in 0..n {
        let mut mean = 0.0;
        for z in &warped {
            mean += z[i];
        }
        mean /= jn as f64;
        for j in 0..jn {
            if Some(j) == theta.anchor() {
                continue;
            }
            let x = data.group(j).values()[i];
            fam.grad_params(theta.group(j), x, &mut dlam);
            let resid = warped[j][i] - mean;
            for k in 0..p {
                grad[j * p + k] += dlam[k] * resid;
            }
        }
    }
    let scale = 2.0 / (jn as f64 * n as f64);
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// Exact Hessian of U_n as a full (J·p)×(J·p) symmetric matrix:
/// block (q,r), q≠r: −(2/J²)(1/n) Σ_i ∇φ_q(X_(i),q) ∇φ_r(X_(i),r)ᵀ;
/// block (q,q): (2/J)(1/n) Σ_i ∇²φ_q(X_(i),q)(Z_{i,q} − Z̄_i)
///            + (2(J−1)/J²)(1/n) Σ_i ∇φ_q ∇φ_qᵀ.
/// Anchoring does not reduce the matrix here; callers drop the anchored
/// block when they need the identifiable version.
pub fn phi_hessian(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    theta: &ThetaVector,
) -> Result<DMatrix<f64>> {
    check_shape(data, fam, theta)?;
    let n = require_equal_n(data, "phi_hessian")?;
    let warped = warp_groups(data, fam, theta)?;
    let jn = data.num_groups();
    let p = fam.param_dim();
    let jf = jn as f64;
    let nf = n as f64;

    // cross[q][r] = (1/n) Σ_i ∇φ_q(X_(i),q) ∇φ_r(X_(i),r)ᵀ for q ≤ r,
    // curv[q] = (1/n) Σ_i ∇²φ_q(X_(i),q) (Z_{i,q} − Z̄_i), symmetrized.
    let mut grads = vec![vec![0.0; p]; jn];
    let mut hess_buf = vec![0.0; p * p];
    let mut cross = vec![vec![DMatrix::<f64>::zeros(p, p); jn]; jn];
    let mut curv = vec![DMatrix::<f64>::zeros(p, p); jn];
    for i in 0..n {
        let mut mean = 0.0;
        for z in &warped {
            mean += z[i];
        }
        mean /= jf;
        for q in 0..jn {
            let x = data.group(q).values()[i];
            fam.grad_params(theta.group(q), x, &mut grads[q]);
            fam.hess_params(theta.group(q), x, &mut hess_buf);
            let resid = warped[q][i] - mean;
            let c = &mut curv[q];
            for a in 0..p {
                for b in a..p {
                    // Average the two mirror entries so a family with a
                    // slightly asymmetric hess_params still yields an exactly
                    // symmetric criterion Hessian.
                    let h = 0.5 * (hess_buf[a * p + b] + hess_buf[b * p + a]) * resid;
                    c[(a, b)] += h;
                    if a != b {
                        c[(b, a)] += h;
                    }
                }
            }
        }
        for q in 0..jn {
            for r in q..jn {
                let m = &mut cross[q][r];
                for a in 0..p {
                    for b in 0..p {
                        m[(a, b)] += grads[q][a] * grads[r][b];
                    }
                }
            }
        }
    }

    let mut out = DMatrix::<f64>::zeros(jn * p, jn * p);
    let off_scale = -2.0 / (jf * jf * nf);
    let diag_cross_scale = 2.0 * (jf - 1.0) / (jf * jf * nf);
    let diag_curv_scale = 2.0 / (jf * nf);
    for q in 0..jn {
        for r in q..jn {
            if q == r {
                for a in 0..p {
                    for b in 0..p {
                        out[(q * p + a, q * p + b)] = diag_curv_scale * curv[q][(a, b)]
                            + diag_cross_scale * cross[q][q][(a, b)];
                    }
                }
            } else {
                for a in 0..p {
                    for b in 0..p {
                        let v = off_scale * cross[q][r][(a, b)];
                        out[(q * p + a, r * p + b)] = v;
                        out[(r * p + b, q * p + a)] = v;
                    }
                }
            }
        }
    }
    // The diagonal blocks are symmetric by construction (curv and cross[q][q]
    // both are), so the whole matrix is exactly symmetric.
    Ok(out)
}

/// Criterion value with optional derivatives at one parameter point.
#[derive(Debug, Clone)]
pub struct CriterionEval {
    /// U_n(θ) ≥ 0.
    pub value: f64,
    /// Full J·p gradient, anchored coordinates zeroed. Equal group sizes only.
    pub gradient: Option<Vec<f64>>,
    /// Full (J·p)×(J·p) symmetric Hessian. Equal group sizes only.
    pub hessian: Option<DMatrix<f64>>,
}

/// Evaluates U_n and, on request, its exact derivatives.
pub fn criterion_eval(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    theta: &ThetaVector,
    want_gradient: bool,
    want_hessian: bool,
) -> Result<CriterionEval> {
    let value = u_n(data, fam, theta)?;
    let gradient = if want_gradient {
        Some(grad_u_n(data, fam, theta)?)
    } else {
        None
    };
    let hessian = if want_hessian {
        Some(phi_hessian(data, fam, theta)?)
    } else {
        None
    };
    Ok(CriterionEval {
        value,
        gradient,
        hessian,
    })
}

/// Local optimizer used inside [`minimize_u_n`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Derivative-free Nelder-Mead with box clamping (default).
    NelderMead,
    /// Projected gradient descent with backtracking; needs equal group
    /// sizes for the analytic gradient and otherwise falls back to
    /// Nelder-Mead.
    ProjectedGradient,
}

/// Options for [`minimize_u_n`].
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub algorithm: Algorithm,
    /// Convergence tolerance on the criterion value.
    pub value_tol: f64,
    /// Iteration cap per start; 0 means 500 per free coordinate.
    pub max_iters: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            algorithm: Algorithm::NelderMead,
            value_tol: 1e-8,
            max_iters: 0,
        }
    }
}

/// Outcome of a multistart minimization of U_n.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub theta_hat: ThetaVector,
    /// U_n at `theta_hat`; never exceeds the criterion at any start point.
    pub value: f64,
    /// Iterations used by the winning local run.
    pub iterations: usize,
    pub converged: bool,
    /// Start points that could be evaluated and were optimized.
    pub restarts_used: usize,
}

struct LocalRun {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder-Mead (reflection 1, expansion 2, contraction 0.5, shrink 0.5) on
/// the free coordinates, every trial point clamped into the box. Converged
/// when the simplex value spread drops below tol·(1 + |best|).
fn nelder_mead(
    f: &(dyn Fn(&[f64]) -> Option<f64> + Sync),
    x0: &[f64],
    bounds: &[(f64, f64)],
    tol: f64,
    max_iters: usize,
) -> Option<LocalRun> {
    let d = x0.len();
    let clamp = |x: &mut [f64]| {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for k in 0..d {
        let (lo, hi) = bounds[k];
        let step = 0.1 * (hi - lo);
        let mut v = x0.to_vec();
        // Step inward when the forward step would leave the box.
        v[k] = if x0[k] + step <= hi { x0[k] + step } else { x0[k] - step };
        clamp(&mut v);
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = Vec::with_capacity(d + 1);
    for v in &simplex {
        fvals.push(f(v)?);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
        let best = order[0];
        let worst = order[d];
        let second_worst = order[d.saturating_sub(1)];
        if fvals[worst] - fvals[best] <= tol * (1.0 + fvals[best].abs()) {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; d];
        for &idx in &order[..d] {
            for k in 0..d {
                centroid[k] += simplex[idx][k];
            }
        }
        for c in &mut centroid {
            *c /= d as f64;
        }
        let worst_point = simplex[worst].clone();
        let point = |coef: f64| {
            let mut v = vec![0.0; d];
            for k in 0..d {
                v[k] = centroid[k] + coef * (worst_point[k] - centroid[k]);
            }
            clamp(&mut v);
            v
        };
        let xr = point(-1.0);
        let fr = f(&xr)?;
        if fr < fvals[best] {
            let xe = point(-2.0);
            let fe = f(&xe)?;
            if fe < fr {
                simplex[worst] = xe;
                fvals[worst] = fe;
            } else {
                simplex[worst] = xr;
                fvals[worst] = fr;
            }
        } else if fr < fvals[second_worst] {
            simplex[worst] = xr;
            fvals[worst] = fr;
        } else {
            let (xc, fc) = if fr < fvals[worst] {
                let xc = point(-0.5);
                let fc = f(&xc)?;
                (xc, fc)
            } else {
                let xc = point(0.5);
                let fc = f(&xc)?;
                (xc, fc)
            };
            if fc < fvals[worst].min(fr) {
                simplex[worst] = xc;
                fvals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for idx in 0..=d {
                    if idx == best {
                        continue;
                    }
                    for k in 0..d {
                        simplex[idx][k] = 0.5 * (simplex[idx][k] + best_point[k]);
                    }
                    fvals[idx] = f(&simplex[idx])?;
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| fvals[a].total_cmp(&fvals[b])).unwrap();
    Some(LocalRun {
        x: simplex[best].clone(),
        value: fvals[best],
        iterations,
        converged,
    })
}

/// Projected gradient descent with Armijo backtracking. Converged when the
/// value decrease stalls below tol·(1 + |f|).
fn projected_gradient(
    f: &(dyn Fn(&[f64]) -> Option<f64> + Sync),
    g: &(dyn Fn(&[f64]) -> Option<Vec<f64>> + Sync),
    x0: &[f64],
    bounds: &[(f64, f64)],
    tol: f64,
    max_iters: usize,
) -> Option<LocalRun> {
    let clamp = |x: &mut [f64]| {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut fx = f(&x)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 1.0_f64;
    while iterations < max_iters {
        iterations += 1;
        let grad = g(&x)?;
        let gnorm2: f64 = grad.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() <= tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        // Backtrack until the Armijo condition holds for the projected step.
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - t * gi).collect();
            clamp(&mut cand);
            let decrease: f64 = x
                .iter()
                .zip(&cand)
                .zip(&grad)
                .map(|((xi, ci), gi)| gi * (xi - ci))
                .sum();
            let fc = f(&cand)?;
            if fc <= fx - 1e-4 * decrease {
                let stalled = fx - fc <= tol * (1.0 + fx.abs());
                x = cand;
                fx = fc;
                accepted = true;
                if stalled {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // A fully stalled line search means no descent direction at
            // machine precision; treat as convergence to a box point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
        step = (t * 2.0).min(1.0);
    }
    Some(LocalRun {
        x,
        value: fx,
        iterations,
        converged,
    })
}

/// Default multistart grid: the identity configuration plus, for each point
/// of a 3-per-coordinate lattice of the parameter box (at fractions 1/4,
/// 1/2, 3/4), the configuration assigning that point to every free group.
pub fn default_start_grid(
    fam: &dyn DeformationFamily,
    num_groups: usize,
    anchor: Option<usize>,
) -> Result<Vec<ThetaVector>> {
    let identity = ThetaVector::identity(num_groups, anchor, fam)?;
    let bounds = fam.param_box();
    let p = bounds.len();
    let mut starts = vec![identity.clone()];
    let fractions = [0.25, 0.5, 0.75];
    let mut index = vec![0usize; p];
    loop {
        let lam: Vec<f64> = (0..p)
            .map(|k| {
                let (lo, hi) = bounds[k];
                lo + fractions[index[k]] * (hi - lo)
            })
            .collect();
        if lam != fam.identity_params() {
            let mut params = vec![fam.identity_params(); num_groups];
            for g in 0..num_groups {
                if Some(g) != anchor {
                    params[g] = lam.clone();
                }
            }
            if let Ok(theta) = match anchor {
                Some(a) => ThetaVector::anchored(params, a, fam),
                None => ThetaVector::new(params, fam),
            } {
                starts.push(theta);
            }
        }
        // Odometer over the p-dimensional lattice.
        let mut k = 0;
        loop {
            if k == p {
                return Ok(starts);
            }
            index[k] += 1;
            if index[k] < fractions.len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

/// Minimizes U_n over the free parameters by multistart local search, every
/// iterate clamped into the family's parameter box. Start points that cannot
/// be evaluated are skipped; if none can, the error is [`Error::NoStartPoint`].
/// Runs execute concurrently and the winner is chosen by (value, start index),
/// so the result does not depend on thread count.
pub fn minimize_u_n(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    starts: &[ThetaVector],
    options: &MinimizeOptions,
) -> Result<MinimizeResult> {
    let template = starts.first().ok_or(Error::NoStartPoint)?;
    for s in starts {
        if s.num_groups() != template.num_groups() || s.anchor() != template.anchor() {
            return Err(Error::domain(
                "all start points must share group count and anchoring".to_string(),
            ));
        }
        check_shape(data, fam, s)?;
    }
    let p = fam.param_dim();
    let free_groups = template.free_groups();
    let dim = free_groups.len() * p;
    if dim == 0 {
        let value = u_n(data, fam, template)?;
        return Ok(MinimizeResult {
            theta_hat: template.clone(),
            value,
            iterations: 0,
            converged: true,
            restarts_used: 1,
        });
    }
    let box_one = fam.param_box();
    let bounds: Vec<(f64, f64)> = free_groups
        .iter()
        .flat_map(|_| box_one.iter().copied())
        .collect();
    let max_iters = if options.max_iters == 0 {
        500 * dim
    } else {
        options.max_iters
    };
    let use_gradient =
        options.algorithm == Algorithm::ProjectedGradient && data.equal_n().is_some();

    let eval = |x: &[f64]| -> Option<f64> {
        let theta = template.with_free_flat(x);
        u_n(data, fam, &theta).ok()
    };
    let eval_grad = |x: &[f64]| -> Option<Vec<f64>> {
        let theta = template.with_free_flat(x);
        let full = grad_u_n(data, fam, &theta).ok()?;
        Some(
            free_groups
                .iter()
                .flat_map(|&g| full[g * p..(g + 1) * p].iter().copied())
                .collect(),
        )
    };

    let runs: Vec<(usize, LocalRun)> = starts
        .par_iter()
        .enumerate()
        .filter_map(|(idx, start)| {
            let x0 = start.free_flat();
            eval(&x0)?;
            let run = if use_gradient {
                projected_gradient(&eval, &eval_grad, &x0, &bounds, options.value_tol, max_iters)
            } else {
                nelder_mead(&eval, &x0, &bounds, options.value_tol, max_iters)
            }?;
            Some((idx, run))
        })
        .collect();
    if runs.is_empty() {
        return Err(Error::NoStartPoint);
    }
    let restarts_used = runs.len();
    let (_, best) = runs
        .into_iter()
        .min_by(|(ia, ra), (ib, rb)| ra.value.total_cmp(&rb.value).then(ia.cmp(ib)))
        .unwrap();
    Ok(MinimizeResult {
        theta_hat: template.with_free_flat(&best.x),
        value: best.value,
        iterations: best.iterations,
        converged: best.converged,
        restarts_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::{LocationFamily, LocationScaleFamily};
    use approx::assert_abs_diff_eq;

    fn two_group_data() -> SampleSet {
        SampleSet::new(vec![
            Sample::new(vec![0.0, 2.0]).unwrap(),
            Sample::new(vec![1.0, 3.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn u_n_location_examples() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let theta0 = ThetaVector::new(vec![vec![0.0], vec![0.0]], &loc).unwrap();
        assert_abs_diff_eq!(u_n(&data, &loc, &theta0).unwrap(), 0.25, epsilon = 1e-15);
        let aligned = ThetaVector::new(vec![vec![0.0], vec![-1.0]], &loc).unwrap();
        assert_abs_diff_eq!(u_n(&data, &loc, &aligned).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn u_n_identical_samples_is_zero() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.3, 1.7, 2.2]).unwrap(),
            Sample::new(vec![0.3, 1.7, 2.2]).unwrap(),
            Sample::new(vec![0.3, 1.7, 2.2]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let theta = ThetaVector::identity(3, None, &ls).unwrap();
        assert_eq!(u_n(&data, &ls, &theta).unwrap(), 0.0);
    }

    #[test]
    fn u_n_matches_merged_grid_path() {
        // Equal sizes run the order-statistic path; forcing the quantile
        // route must agree to 1e-12.
        let data = SampleSet::new(vec![
            Sample::new(vec![0.1, 0.9, 2.3, 3.1]).unwrap(),
            Sample::new(vec![-1.0, 0.4, 0.5, 2.8]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let theta = ThetaVector::new(vec![vec![0.3, 1.2], vec![-0.2, 0.8]], &ls).unwrap();
        let fast = u_n(&data, &ls, &theta).unwrap();
        let qs: Vec<_> = (0..2)
            .map(|j| {
                let z: Vec<f64> = data
                    .group(j)
                    .values()
                    .iter()
                    .map(|&x| ls.value(theta.group(j), x))
                    .collect();
                Sample::new(z).unwrap().quantile_fn().clone()
            })
            .collect();
        let slow = variation2(&qs).unwrap();
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
    }

    #[test]
    fn u_n_unequal_sizes() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.0, 2.0]).unwrap(),
            Sample::new(vec![0.0, 1.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let loc = LocationFamily::default();
        let theta = ThetaVector::identity(2, None, &loc).unwrap();
        // Equals (1/2)·W2²(a,bary)+... computed through the merged grid;
        // sanity: strictly positive and finite.
        let v = u_n(&data, &loc, &theta).unwrap();
        assert!(v > 0.0 && v.is_finite());
    }

    #[test]
    fn gradient_example_and_antisymmetry() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let theta = ThetaVector::new(vec![vec![0.0], vec![0.0]], &loc).unwrap();
        let g = grad_u_n(&data, &loc, &theta).unwrap();
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], -g[1], epsilon = 1e-12);
    }

    #[test]
    fn gradient_zeroes_anchored_coordinates() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let theta = ThetaVector::anchored(vec![vec![0.5], vec![0.0]], 1, &loc).unwrap();
        let g = grad_u_n(&data, &loc, &theta).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0);
    }

    fn finite_diff_grad(
        data: &SampleSet,
        fam: &dyn DeformationFamily,
        theta: &ThetaVector,
        h: f64,
    ) -> Vec<f64> {
        let flat = theta.free_flat();
        let mut out = Vec::with_capacity(flat.len());
        for k in 0..flat.len() {
            let mut up = flat.clone();
            up[k] += h;
            let mut dn = flat.clone();
            dn[k] -= h;
            let fu = u_n(data, fam, &theta.with_free_flat(&up)).unwrap();
            let fd = u_n(data, fam, &theta.with_free_flat(&dn)).unwrap();
            out.push((fu - fd) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.1, 0.9, 2.3, 3.1, -0.4]).unwrap(),
            Sample::new(vec![-1.0, 0.4, 0.5, 2.8, 1.9]).unwrap(),
            Sample::new(vec![0.6, 1.1, -0.3, 2.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let theta = ThetaVector::new(
            vec![vec![0.3, 1.2], vec![-0.2, 0.8], vec![0.05, 1.5]],
            &ls,
        )
        .unwrap();
        let g = grad_u_n(&data, &ls, &theta).unwrap();
        let fd = finite_diff_grad(&data, &ls, &theta, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn hessian_location_closed_form() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let theta = ThetaVector::new(vec![vec![0.0], vec![0.0]], &loc).unwrap();
        let h = phi_hessian(&data, &loc, &theta).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(0, 1)], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 0)], -0.5, epsilon = 1e-12);
        // Leading principal 1x1 block after dropping group 2 is invertible.
        assert!(h[(0, 0)] > 0.0);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.1, 0.9, 2.3, 3.1]).unwrap(),
            Sample::new(vec![-1.0, 0.4, 0.5, 2.8]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let theta = ThetaVector::new(vec![vec![0.3, 1.2], vec![-0.2, 0.8]], &ls).unwrap();
        let h = phi_hessian(&data, &ls, &theta).unwrap();
        let flat = theta.free_flat();
        let step = 1e-4;
        for a in 0..flat.len() {
            for b in 0..flat.len() {
                let mut pp = flat.clone();
                pp[a] += step;
                pp[b] += step;
                let mut pm = flat.clone();
                pm[a] += step;
                pm[b] -= step;
                let mut mp = flat.clone();
                mp[a] -= step;
                mp[b] += step;
                let mut mm = flat.clone();
                mm[a] -= step;
                mm[b] -= step;
                let fd = (u_n(&data, &ls, &theta.with_free_flat(&pp)).unwrap()
                    - u_n(&data, &ls, &theta.with_free_flat(&pm)).unwrap()
                    - u_n(&data, &ls, &theta.with_free_flat(&mp)).unwrap()
                    + u_n(&data, &ls, &theta.with_free_flat(&mm)).unwrap())
                    / (4.0 * step * step);
                assert_abs_diff_eq!(h[(a, b)], fd, epsilon = 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn hessian_is_symmetric() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.1, 0.9, 2.3]).unwrap(),
            Sample::new(vec![-1.0, 0.4, 0.5]).unwrap(),
            Sample::new(vec![0.2, 0.3, 0.4]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let theta = ThetaVector::new(
            vec![vec![0.3, 1.2], vec![-0.2, 0.8], vec![1.0, 2.0]],
            &ls,
        )
        .unwrap();
        let h = phi_hessian(&data, &ls, &theta).unwrap();
        for a in 0..h.nrows() {
            for b in 0..h.ncols() {
                assert_abs_diff_eq!(h[(a, b)], h[(b, a)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn derivatives_require_equal_sizes() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.0, 2.0]).unwrap(),
            Sample::new(vec![0.0, 1.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let loc = LocationFamily::default();
        let theta = ThetaVector::identity(2, None, &loc).unwrap();
        assert!(matches!(
            grad_u_n(&data, &loc, &theta),
            Err(Error::UnequalSampleSizes(_))
        ));
        assert!(matches!(
            phi_hessian(&data, &loc, &theta),
            Err(Error::UnequalSampleSizes(_))
        ));
    }

    #[test]
    fn criterion_eval_bundles_requests() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let theta = ThetaVector::identity(2, None, &loc).unwrap();
        let eval = criterion_eval(&data, &loc, &theta, true, true).unwrap();
        assert_abs_diff_eq!(eval.value, 0.25, epsilon = 1e-15);
        assert!(eval.gradient.is_some());
        assert!(eval.hessian.is_some());
        let bare = criterion_eval(&data, &loc, &theta, false, false).unwrap();
        assert!(bare.gradient.is_none() && bare.hessian.is_none());
    }

    #[test]
    fn minimize_recovers_location_shift() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        // Anchor the second group: the free offset must come out at 1.
        let starts = default_start_grid(&loc, 2, Some(1)).unwrap();
        let res = minimize_u_n(&data, &loc, &starts, &MinimizeOptions::default()).unwrap();
        assert_abs_diff_eq!(res.theta_hat.group(0)[0], 1.0, epsilon = 1e-4);
        assert!(res.value <= 1e-8);
        assert!(res.converged);
        assert_eq!(res.restarts_used, starts.len());
    }

    #[test]
    fn minimize_dominates_every_start() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.1, 0.9, 2.3, 3.1]).unwrap(),
            Sample::new(vec![-1.0, 0.4, 0.5, 2.8]).unwrap(),
        ])
        .unwrap();
        let ls = LocationScaleFamily::default();
        let starts = default_start_grid(&ls, 2, Some(1)).unwrap();
        let res = minimize_u_n(&data, &ls, &starts, &MinimizeOptions::default()).unwrap();
        for s in &starts {
            assert!(res.value <= u_n(&data, &ls, s).unwrap() + 1e-12);
        }
    }

    #[test]
    fn minimize_identity_start_at_optimum() {
        let data = SampleSet::new(vec![
            Sample::new(vec![0.0, 1.0, 2.0]).unwrap(),
            Sample::new(vec![0.0, 1.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let loc = LocationFamily::default();
        let starts = vec![ThetaVector::identity(2, Some(1), &loc).unwrap()];
        let res = minimize_u_n(&data, &loc, &starts, &MinimizeOptions::default()).unwrap();
        assert!(res.value <= 1e-12);
        assert_abs_diff_eq!(res.theta_hat.group(0)[0], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn minimize_needs_a_start() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        assert!(matches!(
            minimize_u_n(&data, &loc, &[], &MinimizeOptions::default()),
            Err(Error::NoStartPoint)
        ));
    }

    #[test]
    fn minimize_projected_gradient_agrees() {
        let data = two_group_data();
        let loc = LocationFamily::default();
        let starts = default_start_grid(&loc, 2, Some(1)).unwrap();
        let opts = MinimizeOptions {
            algorithm: Algorithm::ProjectedGradient,
            ..MinimizeOptions::default()
        };
        let res = minimize_u_n(&data, &loc, &starts, &opts).unwrap();
        assert_abs_diff_eq!(res.theta_hat.group(0)[0], 1.0, epsilon = 1e-3);
        assert!(res.value <= 1e-6);
    }

    #[test]
    fn minimize_permutation_invariant() {
        let a = vec![0.7, -0.2, 1.4, 0.1, 2.2];
        let b = vec![1.5, 0.3, 2.4, 1.1, 3.0];
        let mk = |a: Vec<f64>, b: Vec<f64>| {
            SampleSet::new(vec![Sample::new(a).unwrap(), Sample::new(b).unwrap()]).unwrap()
        };
        let d1 = mk(a.clone(), b.clone());
        let mut a2 = a;
        a2.reverse();
        let mut b2 = b;
        b2.swap(0, 3);
        let d2 = mk(a2, b2);
        let loc = LocationFamily::default();
        let starts = default_start_grid(&loc, 2, Some(1)).unwrap();
        let r1 = minimize_u_n(&d1, &loc, &starts, &MinimizeOptions::default()).unwrap();
        let r2 = minimize_u_n(&d2, &loc, &starts, &MinimizeOptions::default()).unwrap();
        assert_abs_diff_eq!(r1.value, r2.value, epsilon = 1e-8);
    }

    #[test]
    fn default_grid_shape() {
        let loc = LocationFamily::default();
        // identity + lattice {-5, 0, 5} minus the duplicate of identity
        let starts = default_start_grid(&loc, 2, Some(1)).unwrap();
        assert_eq!(starts.len(), 3);
        let ls = LocationScaleFamily::default();
        let starts = default_start_grid(&ls, 3, None).unwrap();
        assert_eq!(starts.len(), 10);
        for s in &starts {
            assert_eq!(s.num_groups(), 3);
        }
    }
}
