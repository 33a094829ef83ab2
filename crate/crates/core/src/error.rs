use thiserror::Error;

/// Errors produced by the split-plot toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("exact evaluation needs {required} kernel evaluations (cap {cap}); use the subsampled estimator")]
    WorkCapExceeded { required: f64, cap: f64 },

    #[error("materializing a {rows}x{rows} matrix exceeds the cap of {cap} rows; use the blockwise path")]
    MaterializationCap { rows: usize, cap: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
