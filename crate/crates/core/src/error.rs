use thiserror::Error;

/// Errors produced anywhere in the estimation toolkit.
#[derive(Debug, Error)]
pub enum PmleError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} passed to {context}")]
    NonFinite { context: &'static str, value: f64 },

    #[error("index {index} out of range for basis of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("error spread exceeds data spread: support would be [{lower}, {upper}]")]
    InvertedSupport { lower: f64, upper: f64 },

    #[error("equality constraint rows are rank deficient (degenerate rows: {rows:?})")]
    RankDeficient { rows: Vec<usize> },

    #[error("infeasible start: objective is +inf at the initial point")]
    InfeasibleStart,

    #[error("initialization failed: no feasible start after {halvings} halvings")]
    InitializationFailed { halvings: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("all subsample fits failed: {0}")]
    AllSubsamplesFailed(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PmleError>;

pub(crate) fn ensure_finite(context: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(PmleError::NonFinite { context, value })
    }
}
