use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a domain invariant (units, ranges, orderings).
    #[error("domain error: {0}")]
    Domain(String),

    /// A vector or tensor had the wrong shape for the requested operation.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration (bad key, out-of-range value, bad ratios).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A column could not be imputed because it is missing in every row.
    #[error("cannot impute column `{column}` of surgery `{surgery}`: missing in every row")]
    Unimputable { surgery: String, column: String },

    /// A nonfinite value appeared where the numerics require finiteness.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training aborted (nonfinite loss or gradient).
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint or dataset file failed validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
