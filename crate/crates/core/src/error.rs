//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("dtype mismatch: {0}")]
    DtypeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values were produced where finite ones are required.
    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
