//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HnrError {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("numeric fault: non-finite value produced by {op}")]
    NumericFault { op: &'static str },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("dimension mismatch: cloud dim {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HnrError>;
