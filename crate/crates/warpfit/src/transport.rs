//! Exact one-dimensional Wasserstein-2 computations: distances, quantile
//! barycenters, the 2-variation, and a brute-force coupling oracle.

use crate::empirical::{merged_grid, QuantileFn, SampleSet};
use crate::error::{Error, Result};

/// Default cap on the per-group sample size accepted by [`coupling_oracle_min`].
pub const DEFAULT_ORACLE_MAX_N: usize = 6;

/// Maximum number of groups accepted by [`coupling_oracle_min`].
pub const ORACLE_MAX_GROUPS: usize = 4;

/// Squared Wasserstein-2 distance between two quantile functions:
/// the exact integral of the squared quantile difference over (0,1].
///
/// For two samples of equal size n this equals the mean of squared
/// differences of sorted values.
pub fn wasserstein2_1d(a: &QuantileFn, b: &QuantileFn) -> f64 {
    let grid = merged_grid(&[a, b]);
    grid.lengths
        .iter()
        .zip(grid.levels[0].iter().zip(&grid.levels[1]))
        .map(|(&len, (&la, &lb))| len * (la - lb) * (la - lb))
        .sum()
}

/// The quantile function of the Wasserstein barycenter: the pointwise average
/// of the input quantile functions.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterQuantile {
    quantile: QuantileFn,
}

impl BarycenterQuantile {
    pub fn quantile_fn(&self) -> &QuantileFn {
        &self.quantile
    }

    pub fn into_quantile_fn(self) -> QuantileFn {
        self.quantile
    }

    /// The barycenter as weighted atoms, merging adjacent segments with equal
    /// levels. Weights sum to 1.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut prev = 0.0;
        for (&b, &l) in self
            .quantile
            .breakpoints()
            .iter()
            .zip(self.quantile.levels())
        {
            let w = b - prev;
            match out.last_mut() {
                Some(last) if last.1 == l => last.0 += w,
                _ => out.push((w, l)),
            }
            prev = b;
        }
        out
    }
}

/// Averages J quantile functions on their merged grid.
pub fn barycenter_quantile(qs: &[QuantileFn]) -> Result<BarycenterQuantile> {
    if qs.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let refs: Vec<&QuantileFn> = qs.iter().collect();
    let grid = merged_grid(&refs);
    let j = qs.len() as f64;
    let segments = grid.lengths.len();
    let mut breakpoints = Vec::with_capacity(segments);
    let mut levels = Vec::with_capacity(segments);
    let mut acc = 0.0;
    for k in 0..segments {
        acc += grid.lengths[k];
        breakpoints.push(acc);
        levels.push(grid.levels.iter().map(|row| row[k]).sum::<f64>() / j);
    }
    // The merged endpoint is exactly 1 but the running sum may not be.
    *breakpoints.last_mut().unwrap() = 1.0;
    Ok(BarycenterQuantile {
        quantile: QuantileFn::from_parts_unchecked(breakpoints, levels),
    })
}

/// Squared Wasserstein 2-variation: the mean squared W2 distance of the J
/// inputs to their barycenter, computed exactly on one merged grid.
pub fn variation2(qs: &[QuantileFn]) -> Result<f64> {
    if qs.len() < 2 {
        return Err(Error::domain(format!(
            "variation needs at least 2 quantile functions, got {}",
            qs.len()
        )));
    }
    let refs: Vec<&QuantileFn> = qs.iter().collect();
    let grid = merged_grid(&refs);
    let j = qs.len() as f64;
    let mut total = 0.0;
    for k in 0..grid.lengths.len() {
        let mean = grid.levels.iter().map(|row| row[k]).sum::<f64>() / j;
        let spread: f64 = grid
            .levels
            .iter()
            .map(|row| (row[k] - mean) * (row[k] - mean))
            .sum();
        total += grid.lengths[k] * spread;
    }
    Ok(total / j)
}

/// Brute-force minimum of the multimarginal coupling cost over all
/// (J-1)-tuples of permutations:
///
/// min over permutations of (1/n) sum_i T(x_{i,1}, x_{s2(i),2}, ...),
/// where T(y) = (1/J) sum_j (y_j - mean(y))^2.
///
/// Enumeration is factorial in n, so the instance size is capped by
/// `max_n` (default [`DEFAULT_ORACLE_MAX_N`]) and J <= [`ORACLE_MAX_GROUPS`].
/// Serves as an independent check of [`variation2`]: in one dimension the
/// comonotone (sorted) coupling attains this minimum.
pub fn coupling_oracle_min(samples: &SampleSet, max_n: Option<usize>) -> Result<f64> {
    let limit = max_n.unwrap_or(DEFAULT_ORACLE_MAX_N);
    let j = samples.num_groups();
    let n = samples
        .equal_n()
        .ok_or_else(|| Error::domain("coupling oracle needs equal sample sizes".to_string()))?;
    if n > limit {
        return Err(Error::OracleTooLarge(format!("n = {n} exceeds limit {limit}")));
    }
    if j > ORACLE_MAX_GROUPS {
        return Err(Error::OracleTooLarge(format!(
            "J = {j} exceeds limit {ORACLE_MAX_GROUPS}"
        )));
    }

    let perms = permutations(n);
    // One permutation index per non-reference group; the first group stays in
    // its stored order (the cost is invariant under a common re-indexing).
    let mut counters = vec![0usize; j - 1];
    let mut best = f64::INFINITY;
    let mut tuple = vec![0.0; j];
    loop {
        let mut cost = 0.0;
        for i in 0..n {
            tuple[0] = samples.group(0).values()[i];
            for (g, &c) in counters.iter().enumerate() {
                tuple[g + 1] = samples.group(g + 1).values()[perms[c][i]];
            }
            let mean = tuple.iter().sum::<f64>() / j as f64;
            cost += tuple.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / j as f64;
        }
        best = best.min(cost / n as f64);

        let mut g = 0;
        loop {
            if g == counters.len() {
                return Ok(best);
            }
            counters[g] += 1;
            if counters[g] < perms.len() {
                break;
            }
            counters[g] = 0;
            g += 1;
        }
    }
}

/// All permutations of 0..n via Heap's algorithm.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut idx, &mut out);
    out
}

fn heap_permute(k: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(idx.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, idx, out);
        if k % 2 == 0 {
            idx.swap(i, k - 1);
        } else {
            idx.swap(0, k - 1);
        }
    }
}
