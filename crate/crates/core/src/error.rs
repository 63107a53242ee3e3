use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-positive spectral efficiency for cell {cell}, test point {tp}")]
    NonPositiveEfficiency { cell: usize, tp: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("rounding failed: test point {tp} fits no cell")]
    RoundingFailed { tp: usize },
    #[error("numerical failure in LP solver: {0}")]
    Numerical(String),
    #[error("instance exceeds exact-solver limits: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
