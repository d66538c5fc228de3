use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size mismatch: expected N={expected}, got N={actual}")]
    SizeMismatch { expected: usize, actual: usize },

    /// The requested problem size exceeds the configured memory or time bound.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("objective evaluation failed: {0}")]
    Objective(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabsError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabsError::InvalidArgument(msg.into()))
}
