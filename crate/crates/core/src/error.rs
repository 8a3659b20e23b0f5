//! Error type shared across the library.

use thiserror::Error;

/// Library-wide error type.
///
/// `InvalidInput` covers violated preconditions (bad arguments, malformed
/// or inconsistent data); `Numerical` covers failures that arise during
/// otherwise well-posed computations (loss of positive definiteness,
/// divergent series, overflow).
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
