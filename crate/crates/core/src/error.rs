use crate::expr::{EvalError, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss or gradient at batch index {index}")]
    NonFiniteStep { index: usize },
    #[error("symbolic regression produced no finite candidate")]
    EmptyFront,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
