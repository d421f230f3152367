use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("malformed problem: {0}")]
    Malformed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("external solver failed: {0}")]
    External(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConicError>;
