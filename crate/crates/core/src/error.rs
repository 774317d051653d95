use std::io;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),
    /// A serialized blob could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    /// A computation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
