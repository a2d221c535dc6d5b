//! Sorted samples, empirical quantile functions, and merged integration grids.
//!
//! The quantile convention throughout is the left-continuous generalized
//! inverse `F_n^{-1}(t) = x_(ceil(n t))`, which makes every integral over
//! (0,1] of a piecewise-constant quantile function an exact finite sum.

use crate::error::{Error, Result};

/// A sample stored in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    /// Builds a sample from raw observations, sorting them ascending.
    /// Input order is irrelevant; ties are kept.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptySample);
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { index, value });
            }
        }
        let mut values = raw;
        values.sort_unstable_by(f64::total_cmp);
        Ok(Sample { values })
    }

    /// Wraps values that are already sorted ascending (e.g. the image of a
    /// sorted sample under an increasing map).
    pub(crate) fn from_sorted_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        Sample { values }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Sorted observations.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Empirical quantile `x_(ceil(n t))` for `t` in (0,1].
    pub fn quantile_at(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::domain(format!("quantile level {t} outside (0,1]")));
        }
        let n = self.values.len();
        let rank = (n as f64 * t).ceil() as usize;
        Ok(self.values[rank.clamp(1, n) - 1])
    }

    /// The step quantile function with breakpoints i/n.
    pub fn quantile_fn(&self) -> QuantileFn {
        let n = self.values.len();
        let breakpoints = (1..=n).map(|i| i as f64 / n as f64).collect();
        QuantileFn {
            breakpoints,
            levels: self.values.clone(),
        }
    }
}

/// A collection of J >= 2 samples, one per group.
#[derive(Debug, Clone)]
pub struct SampleSet {
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain(format!(
                "a sample set needs at least 2 groups, got {}",
                samples.len()
            )));
        }
        Ok(SampleSet { samples })
    }

    pub fn num_groups(&self) -> usize {
        self.samples.len()
    }

    pub fn group(&self, j: usize) -> &Sample {
        &self.samples[j]
    }

    pub fn groups(&self) -> &[Sample] {
        &self.samples
    }

    /// Common sample size if all groups have the same length.
    pub fn equal_n(&self) -> Option<usize> {
        let n = self.samples[0].n();
        self.samples.iter().all(|s| s.n() == n).then_some(n)
    }

    pub fn min_n(&self) -> usize {
        self.samples.iter().map(Sample::n).min().unwrap()
    }
}

/// Piecewise-constant left-continuous quantile function.
///
/// `value_at(t) = levels[k]` for `t` in `(breakpoints[k-1], breakpoints[k]]`
/// with the convention `breakpoints[-1] = 0`; the last breakpoint is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFn {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl QuantileFn {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != levels.len() {
            return Err(Error::domain(
                "quantile function needs equal, nonzero breakpoint/level counts".to_string(),
            ));
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b > prev && b <= 1.0) {
                return Err(Error::domain(format!(
                    "breakpoints must be strictly increasing within (0,1], got {b} after {prev}"
                )));
            }
            prev = b;
        }
        if *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::domain("last breakpoint must equal 1".to_string()));
        }
        for (index, &value) in levels.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { index, value });
            }
        }
        if levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("levels must be non-decreasing".to_string()));
        }
        Ok(QuantileFn {
            breakpoints,
            levels,
        })
    }

    /// Constructor for internally produced grids whose invariants hold by
    /// construction (merged refinements, averaged levels).
    pub(crate) fn from_parts_unchecked(breakpoints: Vec<f64>, levels: Vec<f64>) -> Self {
        debug_assert_eq!(breakpoints.len(), levels.len());
        debug_assert_eq!(breakpoints.last().copied(), Some(1.0));
        debug_assert!(levels.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        QuantileFn {
            breakpoints,
            levels,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Evaluates the quantile function at `t` in (0,1].
    pub fn value_at(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::domain(format!("quantile level {t} outside (0,1]")));
        }
        let idx = self.breakpoints.partition_point(|&b| b < t);
        Ok(self.levels[idx.min(self.levels.len() - 1)])
    }

    /// Exact integral over (0,1], a weighted sum of levels.
    pub fn integral(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for (&b, &l) in self.breakpoints.iter().zip(&self.levels) {
            total += (b - prev) * l;
            prev = b;
        }
        total
    }
}

/// One segment of the common breakpoint refinement of two quantile functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSegment {
    pub length: f64,
    pub level_a: f64,
    pub level_b: f64,
}

/// Common refinement of two breakpoint sets. Segment lengths sum to 1, and on
/// each segment both functions are constant at the reported levels.
pub fn merged_quantile_grid(a: &QuantileFn, b: &QuantileFn) -> Vec<GridSegment> {
    let grid = merged_grid(&[a, b]);
    grid.lengths
        .iter()
        .zip(grid.levels[0].iter().zip(&grid.levels[1]))
        .map(|(&length, (&level_a, &level_b))| GridSegment {
            length,
            level_a,
            level_b,
        })
        .collect()
}

/// Common refinement of any number of quantile functions.
/// `levels[j][k]` is the value of function `j` on segment `k`.
#[derive(Debug, Clone)]
pub struct MergedGrid {
    pub lengths: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
}

pub fn merged_grid(fns: &[&QuantileFn]) -> MergedGrid {
    let mut ptrs = vec![0usize; fns.len()];
    let mut lengths = Vec::new();
    let mut levels = vec![Vec::new(); fns.len()];
    let mut prev = 0.0;
    while prev < 1.0 {
        let next = fns
            .iter()
            .zip(&ptrs)
            .map(|(f, &p)| f.breakpoints[p])
            .fold(f64::INFINITY, f64::min);
        lengths.push(next - prev);
        for (j, f) in fns.iter().enumerate() {
            levels[j].push(f.levels[ptrs[j]]);
            if f.breakpoints[ptrs[j]] == next {
                ptrs[j] += 1;
            }
        }
        prev = next;
    }
    MergedGrid { lengths, levels }
}
