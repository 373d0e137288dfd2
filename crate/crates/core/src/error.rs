use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no observable events")]
    NoEvents,

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("no cases at horizon {0}")]
    NoCases(f64),

    #[error("no controls at horizon {0}")]
    NoControls(f64),

    #[error("log-rank variance is zero")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
