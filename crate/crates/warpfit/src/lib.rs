//! Estimation and goodness-of-fit testing for 1-D deformation models.
//!
//! Observations in J groups are modeled as a common template distribution
//! pushed through group-specific increasing warps from a parametric family.
//! The crate estimates the warp parameters by minimizing the empirical
//! Wasserstein-2 barycenter variation of the unwarped samples, simulates the
//! limiting null distribution of the minimized criterion, and wraps both into
//! bootstrap-calibrated hypothesis tests.

pub mod bootstrap;
pub mod criterion;
pub mod deformation;
pub mod empirical;
pub mod error;
pub mod inference;
pub mod seeds;
pub mod testing;
pub mod transport;

pub use bootstrap::{
    bootstrap_quantile, bootstrap_statistic_distribution, resample_mn, BootstrapConfig,
    BootstrapDistribution, BootstrapMode, BootstrapStatistic,
};
pub use criterion::{
    criterion_eval, default_start_grid, grad_u_n, minimize_u_n, phi_hessian, u_n, Algorithm,
    CriterionEval, MinimizeOptions, MinimizeResult,
};
pub use deformation::{
    check_monotone, check_monotone_on, inverse_warp, warp_jacobians, warp_value,
    DeformationFamily, LocationFamily, LocationScaleFamily, ScaleFamily, ThetaVector,
    WarpJacobians,
};
pub use empirical::{merged_grid, merged_quantile_grid, MergedGrid, QuantileFn, Sample, SampleSet};
pub use error::{Error, Result};
pub use inference::{
    brownian_bridge_path, estimate, phi_from_r_quantile, simulate_limit_general,
    simulate_limit_null, simulate_theta_limit, AnchorChoice, BridgePath, EstimateOptions,
    EstimateResult, GeneralLimitModel, LimitCandidate, LimitDrawComponents, LimitLawSample,
    NullLimitModel, PhiMatrix, ScalarFn,
};
pub use seeds::derive_seed;
pub use testing::{
    estimate_sigma, normal_quantile, test_nonparametric_delta0, test_parametric_null,
    test_vn_normal, SigmaStrategy, TestKind, TestOptions, TestReport,
};
pub use transport::{
    barycenter_quantile, coupling_oracle_min, variation2, wasserstein2_1d, BarycenterQuantile,
    DEFAULT_ORACLE_MAX_N,
};
