//! Error type shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("malformed page or record: {0}")]
    Format(String),

    #[error("capacity exhausted: {0}")]
    Capacity(String),

    #[error("log integrity: {0}")]
    LogIntegrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("key or value too large: {0}")]
    Size(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
