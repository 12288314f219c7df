use thiserror::Error;

/// Errors produced by the optimizer and its building blocks.
///
/// Numerical failures (factorizations, infeasible steps, failed fits) are
/// ordinary values: callers adapt regularization or skip an update instead of
/// aborting.
#[derive(Debug, Error)]
pub enum VipsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("non-finite entries in {what}")]
    NonFinite { what: &'static str },

    #[error("step size {eta:e} gives natural parameters that are not positive definite")]
    InfeasibleStep { eta: f64 },

    #[error("trust-region update rejected: {reason}")]
    UpdateRejected { reason: String },

    #[error("weighted least-squares fit failed")]
    FitFailed,

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("sample database is empty")]
    EmptyDatabase,

    #[error("target evaluation failed at {sample:?}: {message}")]
    TargetEvaluation { message: String, sample: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VipsError>;
