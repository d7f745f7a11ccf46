use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum SonicError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {block}: {detail}")]
    NonFinite { block: String, detail: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SonicError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SonicError::InvalidArgument(msg.into()))
}
