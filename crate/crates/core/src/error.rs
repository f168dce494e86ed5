use thiserror::Error;

/// Errors raised across the estimation, oracle and pipeline layers.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("proportions are not on the simplex (sum {sum}, min {min})")]
    OffSimplex { sum: f64, min: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("overlap violated at context {context}, action {action}: evaluation prob {target}, logging prob {logging}")]
    OverlapViolation {
        context: usize,
        action: usize,
        target: f64,
        logging: f64,
    },

    #[error("stratum {0} is empty")]
    EmptyStratum(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("search exhausted: {0}")]
    SearchExhausted(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = OpeError> = std::result::Result<T, E>;
