//! Shared error type for all library modules.

/// Errors surfaced by sample construction, transport computations,
/// deformation evaluation, optimization, simulation, and bootstrap.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite value at position {index}: {value}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("empty collection")]
    EmptyCollection,
    #[error("{0}")]
    Domain(String),
    #[error("coupling oracle instance too large: {0}")]
    OracleTooLarge(String),
    #[error("parameter out of bounds: {0}")]
    ParamOutOfBounds(String),
    #[error("value outside warp range: {0}")]
    RangeError(String),
    #[error("unequal sample sizes: {0}")]
    UnequalSampleSizes(String),
    #[error("no valid start point")]
    NoStartPoint,
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("density must be positive on the grid: {0}")]
    DensityError(String),
    #[error("correction matrix is singular")]
    SingularPhi,
    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapUnstable { failed: usize, total: usize },
    #[error("sigma estimate is degenerate (zero variance on non-degenerate data)")]
    SigmaDegenerate,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
