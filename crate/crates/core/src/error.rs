use std::path::PathBuf;

/// Errors produced anywhere in the profiling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
