//! m-out-of-n bootstrap for the minimized criterion: group-wise resampling,
//! replicate distributions of scaled statistics, and their quantiles.

use crate::criterion::{minimize_u_n, MinimizeOptions};
use crate::deformation::{DeformationFamily, ThetaVector};
use crate::empirical::{Sample, SampleSet};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Replicate-failure share above which the distribution is rejected.
const MAX_FAILURE_SHARE: f64 = 0.05;

/// Resample-size regime. Both satisfy m_n -> infinity; the parametric-null
/// regime needs m_n/n -> 0 and the nonparametric one the stricter
/// m_n/sqrt(n) -> 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode {
    ParametricNull,
    Nonparametric,
}

/// Bootstrap engine configuration.
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Resample size per group; must satisfy 1 <= m_n <= min group size.
    pub m_n: usize,
    /// Number of replicates.
    pub b: usize,
    pub master_seed: u64,
    pub mode: BootstrapMode,
}

impl BootstrapConfig {
    /// Default configuration for a dataset: m_n = ceil(n^0.7) in the
    /// parametric-null regime, ceil(n^0.45) in the nonparametric one, with n
    /// the smallest group size, and B = 500 replicates.
    pub fn for_data(data: &SampleSet, mode: BootstrapMode, master_seed: u64) -> Self {
        let n = data.min_n() as f64;
        let exponent = match mode {
            BootstrapMode::ParametricNull => 0.7,
            BootstrapMode::Nonparametric => 0.45,
        };
        let m_n = (n.powf(exponent).ceil() as usize).clamp(1, data.min_n());
        BootstrapConfig {
            m_n,
            b: 500,
            master_seed,
            mode,
        }
    }

    pub fn validate(&self, data: &SampleSet) -> Result<()> {
        if self.m_n < 1 || self.m_n > data.min_n() {
            return Err(Error::domain(format!(
                "m_n = {} outside [1, {}]",
                self.m_n,
                data.min_n()
            )));
        }
        if self.b < 1 {
            return Err(Error::domain("B must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Which scaled functional of the resampled minimized criterion each
/// replicate records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BootstrapStatistic {
    /// m_n * inf U*_{m_n}; calibrates the parametric-null test.
    ScaledInfUnNull,
    /// sqrt(m_n) * (inf U*_{m_n} - center); calibrates the Delta_0 test and
    /// the sigma estimate.
    CenteredRootInfUn { center: f64 },
}

impl BootstrapStatistic {
    pub fn descriptor(&self) -> &'static str {
        match self {
            BootstrapStatistic::ScaledInfUnNull => "scaled-inf-Un-null",
            BootstrapStatistic::CenteredRootInfUn { .. } => "centered-root-inf-Un",
        }
    }

    fn apply(&self, m_n: usize, inf_u: f64) -> f64 {
        match *self {
            BootstrapStatistic::ScaledInfUnNull => m_n as f64 * inf_u,
            BootstrapStatistic::CenteredRootInfUn { center } => {
                (m_n as f64).sqrt() * (inf_u - center)
            }
        }
    }
}

/// Sorted replicate values of one bootstrap statistic.
#[derive(Debug, Clone)]
pub struct BootstrapDistribution {
    /// Ascending; length is the number of successful replicates (at least
    /// 95% of B).
    pub replicate_values: Vec<f64>,
    pub statistic: BootstrapStatistic,
    pub m_n: usize,
}

/// Draws m_n observations with replacement from each group independently.
pub fn resample_mn<R: Rng + ?Sized>(
    data: &SampleSet,
    m_n: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if m_n < 1 {
        return Err(Error::domain("m_n must be at least 1".to_string()));
    }
    let mut groups = Vec::with_capacity(data.num_groups());
    for sample in data.groups() {
        let values = sample.values();
        let drawn: Vec<f64> = (0..m_n)
            .map(|_| values[rng.gen_range(0..values.len())])
            .collect();
        groups.push(Sample::new(drawn)?);
    }
    SampleSet::new(groups)
}

/// B replicates of resample -> minimize -> scale. Replicates run
/// concurrently with per-replicate seeds derived from the master seed, so
/// the result is identical for any thread count. Replicates whose
/// minimization fails are dropped; more than 5% failures aborts with
/// [`Error::BootstrapUnstable`].
pub fn bootstrap_statistic_distribution(
    data: &SampleSet,
    fam: &dyn DeformationFamily,
    config: &BootstrapConfig,
    statistic: BootstrapStatistic,
    starts: &[ThetaVector],
    minimize: &MinimizeOptions,
) -> Result<BootstrapDistribution> {
    config.validate(data)?;
    if starts.is_empty() {
        return Err(Error::NoStartPoint);
    }
    let outcomes: Vec<Option<f64>> = (0..config.b)
        .into_par_iter()
        .map(|rep| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, rep as u64));
            let resampled = resample_mn(data, config.m_n, &mut rng).ok()?;
            let min = minimize_u_n(&resampled, fam, starts, minimize).ok()?;
            Some(statistic.apply(config.m_n, min.value))
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed as f64 > MAX_FAILURE_SHARE * config.b as f64 {
        return Err(Error::BootstrapUnstable {
            failed,
            total: config.b,
        });
    }
    let mut replicate_values: Vec<f64> = outcomes.into_iter().flatten().collect();
    replicate_values.sort_by(f64::total_cmp);
    Ok(BootstrapDistribution {
        replicate_values,
        statistic,
        m_n: config.m_n,
    })
}

/// Order statistic at rank ceil(B*alpha) of the replicate values, matching
/// the left-continuous quantile convention used for samples.
pub fn bootstrap_quantile(dist: &BootstrapDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    let b = dist.replicate_values.len();
    if b == 0 {
        return Err(Error::EmptyCollection);
    }
    let rank = ((b as f64 * alpha).ceil() as usize).clamp(1, b);
    Ok(dist.replicate_values[rank - 1])
}
