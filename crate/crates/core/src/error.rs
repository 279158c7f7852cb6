use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is singular (pivot {pivot:e} below tolerance {tolerance:e})")]
    SingularMatrix { pivot: f64, tolerance: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("stationary distribution did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("sigma > 0 requires the next action of a non-terminal transition")]
    MissingNextAction,

    #[error("update produced a non-finite parameter; check the step sizes")]
    NonFiniteUpdate,

    #[error("case classification needs rows for sigma = 0 and sigma = 1")]
    MissingExtremes,

    #[error("need at least 2 runs per configuration, got {0}")]
    InsufficientRuns(usize),
}
