use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Input data failed validation (line-numbered where applicable).
    #[error("data validation failed: {0}")]
    Validation(String),
    /// A non-finite value or a numerical contract violation.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
