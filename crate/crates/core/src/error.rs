use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid point id {id} (n = {n})")]
    InvalidId { id: u32, n: usize },

    #[error("point {0} has no in-memory pivot")]
    NotResident(u32),

    #[error("read queue full (depth {0})")]
    QueueFull(usize),

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
