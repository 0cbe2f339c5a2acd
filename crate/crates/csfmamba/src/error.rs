use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or sequence shapes are incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Dataset contents or header are inconsistent.
    #[error("dataset error: {0}")]
    Dataset(String),
    /// A numeric domain guard fired (non-finite values, overflow, degenerate statistics).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Configuration file or field is invalid.
    #[error("config error: {0}")]
    Config(String),
    /// Checkpoint manifest or payload is malformed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
