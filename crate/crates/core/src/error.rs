use std::io;

use thiserror::Error;

/// Errors surfaced by the library. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum NaiError {
    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),
    /// Invalid configuration or incompatible artifacts.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    /// A NaN or infinity appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, NaiError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(NaiError::Input(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(NaiError::Config(msg.into()))
}
