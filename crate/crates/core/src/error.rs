use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum NetvarError {
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("non-numeric cell {value:?} at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize, value: String },

    #[error("missing value for unit {unit} at time index {time}")]
    MissingValue { unit: usize, time: usize },

    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model is not stationary: {0}")]
    NonStationary(String),

    #[error("identification error: {0}")]
    Identification(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetvarError>;
