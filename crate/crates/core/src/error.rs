use thiserror::Error;

/// Errors raised by the pooling library and its harnesses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape {shape:?} holds {expected} elements but {got} values were supplied")]
    LengthMismatch {
        shape: [usize; 4],
        expected: usize,
        got: usize,
    },

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    EmptyShape([usize; 4]),

    #[error("index ({batch}, {channel}) out of range for shape {shape:?}")]
    IndexOutOfRange {
        batch: usize,
        channel: usize,
        shape: [usize; 4],
    },

    #[error("pooling window is empty")]
    EmptyWindow,

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("mixing weight must lie in [0, 1], got {0}")]
    InvalidMixingWeight(f64),

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
