use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("at least {required} samples needed, got {got}")]
    NotEnoughSamples { required: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid rank: {0}")]
    InvalidRank(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}
