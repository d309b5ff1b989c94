use thiserror::Error;

use crate::scorer::ScorerError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid subband: level {level} exceeds decomposition depth {levels}")]
    InvalidSubband { level: usize, levels: usize },

    #[error("index {index} out of range for dimension {dim}")]
    Index { index: usize, dim: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

pub type Result<T> = std::result::Result<T, Error>;
