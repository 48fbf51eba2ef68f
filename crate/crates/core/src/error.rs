//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Geometry outside what an operation supports (e.g. non-uniform array).
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    /// An iterative or factorization step failed to converge or broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Artifacts produced for different geometries were mixed.
    #[error("geometry hash mismatch: {0}")]
    HashMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file did not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TomoError>;

impl TomoError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TomoError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        TomoError::Numerical(msg.into())
    }
}
