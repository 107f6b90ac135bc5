use thiserror::Error;

/// Errors raised by layout transforms, kernels and primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("block factor {block} does not divide {dim} extent {extent}")]
    Divisibility {
        dim: &'static str,
        extent: usize,
        block: usize,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid batch-reduce spec: {0}")]
    InvalidSpec(String),

    #[error("invalid tile plan: {0}")]
    InvalidPlan(String),

    #[error("{operand} block {index} too short: needs {needed} elements, has {available}")]
    OutOfBounds {
        operand: &'static str,
        index: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid convolution: {0}")]
    InvalidConv(String),

    #[error("tensor i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
