//! Frozen cross-module reference values: hand-derived numbers that pin the
//! conventions (quantile rank rule, criterion scaling, curvature layout,
//! bootstrap quantile rank) against accidental drift.

use approx::assert_abs_diff_eq;
use warpfit::{
    barycenter_quantile, bootstrap_quantile, coupling_oracle_min, default_start_grid, grad_u_n,
    minimize_u_n, normal_quantile, phi_from_r_quantile, phi_hessian, u_n, variation2,
    wasserstein2_1d, BootstrapDistribution, BootstrapStatistic, LocationFamily,
    LocationScaleFamily, MinimizeOptions, PhiMatrix, Sample, SampleSet, ScalarFn, ThetaVector,
};

fn qf(values: Vec<f64>) -> warpfit::QuantileFn {
    Sample::new(values).unwrap().quantile_fn()
}

#[test]
fn wasserstein_reference_values() {
    // Equal sizes: mean squared gap of sorted values.
    assert_abs_diff_eq!(
        wasserstein2_1d(&qf(vec![0.0, 2.0]), &qf(vec![1.0, 3.0])),
        1.0,
        epsilon = 1e-15
    );
    // Unequal sizes: merged-grid value 2/3 for {0,2} vs {0,1,3}.
    assert_abs_diff_eq!(
        wasserstein2_1d(&qf(vec![0.0, 2.0]), &qf(vec![0.0, 1.0, 3.0])),
        2.0 / 3.0,
        epsilon = 1e-15
    );
}

#[test]
fn barycenter_and_variation_reference_values() {
    let bary = barycenter_quantile(&[qf(vec![0.0, 2.0]), qf(vec![1.0, 3.0])]).unwrap();
    assert_eq!(bary.atoms(), vec![(0.5, 0.5), (0.5, 2.5)]);
    assert_abs_diff_eq!(
        variation2(&[qf(vec![0.0, 2.0]), qf(vec![1.0, 3.0])]).unwrap(),
        0.25,
        epsilon = 1e-15
    );
    // For two groups the variation is W2^2/4: each group sits half the
    // quantile gap away from the barycenter.
    assert_abs_diff_eq!(
        variation2(&[qf(vec![0.0, 2.0]), qf(vec![0.0, 1.0, 3.0])]).unwrap(),
        2.0 / 3.0 / 4.0,
        epsilon = 1e-15
    );
}

#[test]
fn oracle_agrees_with_variation_on_equal_sizes() {
    let data = SampleSet::new(vec![
        Sample::new(vec![0.0, 2.0]).unwrap(),
        Sample::new(vec![1.0, 3.0]).unwrap(),
    ])
    .unwrap();
    let oracle = coupling_oracle_min(&data, None).unwrap();
    assert_abs_diff_eq!(oracle, 0.25, epsilon = 1e-15);
}

#[test]
fn criterion_reference_values() {
    let data = SampleSet::new(vec![
        Sample::new(vec![0.0, 2.0]).unwrap(),
        Sample::new(vec![1.0, 3.0]).unwrap(),
    ])
    .unwrap();
    let loc = LocationFamily::default();
    let theta = ThetaVector::new(vec![vec![0.0], vec![0.0]], &loc).unwrap();
    assert_abs_diff_eq!(u_n(&data, &loc, &theta).unwrap(), 0.25, epsilon = 1e-15);
    let g = grad_u_n(&data, &loc, &theta).unwrap();
    assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-12);
    let h = phi_hessian(&data, &loc, &theta).unwrap();
    assert_abs_diff_eq!(h[(0, 0)], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(h[(0, 1)], -0.5, epsilon = 1e-12);
}

#[test]
fn minimize_reference_value() {
    let data = SampleSet::new(vec![
        Sample::new(vec![0.0, 2.0]).unwrap(),
        Sample::new(vec![1.0, 3.0]).unwrap(),
    ])
    .unwrap();
    let loc = LocationFamily::default();
    let starts = default_start_grid(&loc, 2, Some(1)).unwrap();
    let res = minimize_u_n(&data, &loc, &starts, &MinimizeOptions::default()).unwrap();
    assert_abs_diff_eq!(res.theta_hat.group(0)[0], 1.0, epsilon = 1e-4);
    assert!(res.value.abs() <= 1e-10);
}

#[test]
fn anchored_phi_analytic_form() {
    // Location family: R == 1, so the anchored curvature has diagonal
    // 2(J-1)/J^2 and off-diagonal -2/J^2.
    for j in [2usize, 3, 4] {
        let r: Vec<Vec<ScalarFn>> = (0..j).map(|_| {
            let f: ScalarFn = Box::new(|_| 1.0);
            vec![f]
        }).collect();
        let full = phi_from_r_quantile(&r, 64).unwrap();
        let phi = PhiMatrix::from_full(full, Some(j - 1), 1).unwrap();
        let eff = phi.effective();
        let jf = j as f64;
        assert_eq!(eff.nrows(), j - 1);
        for a in 0..j - 1 {
            for b in 0..j - 1 {
                let want = if a == b {
                    2.0 * (jf - 1.0) / (jf * jf)
                } else {
                    -2.0 / (jf * jf)
                };
                assert_abs_diff_eq!(eff[(a, b)], want, epsilon = 1e-12);
            }
        }
        assert!(phi.invertible());
    }
}

#[test]
fn bootstrap_quantile_reference_values() {
    let dist = BootstrapDistribution {
        replicate_values: (1..=100).map(|i| i as f64).collect(),
        statistic: BootstrapStatistic::ScaledInfUnNull,
        m_n: 10,
    };
    assert_eq!(bootstrap_quantile(&dist, 0.95).unwrap(), 95.0);
    let small = BootstrapDistribution {
        replicate_values: vec![1.0, 2.0, 3.0],
        statistic: BootstrapStatistic::ScaledInfUnNull,
        m_n: 10,
    };
    assert_eq!(bootstrap_quantile(&small, 0.5).unwrap(), 2.0);
}

#[test]
fn normal_quantile_reference_value() {
    assert_abs_diff_eq!(
        normal_quantile(0.05).unwrap(),
        -1.6448536269514722,
        epsilon = 1e-8
    );
}

#[test]
fn location_scale_minimize_recovers_affine_map() {
    // Second group is an exact affine image of the first: minimization must
    // align them to numerical zero.
    let base: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
    let warped: Vec<f64> = base.iter().map(|v| 0.6 * v - 0.8).collect();
    let data = SampleSet::new(vec![
        Sample::new(warped).unwrap(),
        Sample::new(base).unwrap(),
    ])
    .unwrap();
    let ls = LocationScaleFamily::default();
    let starts = default_start_grid(&ls, 2, Some(1)).unwrap();
    let res = minimize_u_n(&data, &ls, &starts, &MinimizeOptions::default()).unwrap();
    // phi_(a,b)(x) = a + b x applied to group 1 must invert x -> 0.6x - 0.8,
    // i.e. b = 1/0.6, a = 0.8/0.6.
    assert!(res.value <= 1e-6, "value = {}", res.value);
    assert_abs_diff_eq!(res.theta_hat.group(0)[1], 1.0 / 0.6, epsilon = 1e-2);
    assert_abs_diff_eq!(res.theta_hat.group(0)[0], 0.8 / 0.6, epsilon = 1e-2);
}
