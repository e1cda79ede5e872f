use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample matrix is empty")]
    Empty,

    #[error("at least 2 sensors are required, got {0}")]
    TooFewSensors(usize),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("covariance of component {0} is not positive definite")]
    CholeskyFailure(usize),

    #[error("variance of sensor {sensor} is not positive ({variance:e})")]
    DegenerateVariance { sensor: usize, variance: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

pub type Result<T> = std::result::Result<T, Error>;
