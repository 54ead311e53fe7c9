use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An integrator step produced NaN or Inf.
    #[error("blow-up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error(
        "brownian path of {steps} steps x {channels} channels does not fit in memory; \
         split the horizon and stream the path in chunks"
    )]
    PathTooLarge { steps: usize, channels: usize },

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}
