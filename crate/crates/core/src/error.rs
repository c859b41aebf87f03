use thiserror::Error;

/// Errors raised by the solver, the analysis routines and the file readers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("kernel entry at row {row}, column {col} is not strictly positive ({value})")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },

    #[error("probability vector does not sum to one (observed sum {sum})")]
    NotNormalized { sum: f64 },

    #[error("numerical failure at iteration {iteration}: {reason}")]
    NumericalFailure { iteration: usize, reason: String },

    #[error("plan is not converged enough for analysis (marginal residual {residual:e}, limit {limit:e})")]
    StalePlan { residual: f64, limit: f64 },

    #[error("kernel is numerically rank deficient (sigma_min/sigma_max = {ratio:e}, threshold {threshold:e})")]
    RankDeficient { ratio: f64, threshold: f64 },

    #[error("invalid estimation window: {0}")]
    InvalidWindow(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
