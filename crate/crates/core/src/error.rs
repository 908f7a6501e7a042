use thiserror::Error;

use crate::engine::RunTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter space must have at least one dimension")]
    EmptySpace,

    #[error("dimension {dim}: upper bound {hi} must exceed lower bound {lo}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },

    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("expected {expected} query results, got {got}")]
    MalformedQueryResults { expected: usize, got: usize },

    #[error("rect {0} does not exist or was already divided")]
    DeadRect(usize),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("objective failed: {message}")]
    ObjectiveFailed {
        message: String,
        partial: Box<RunTrace>,
    },

    #[error("margin loss needs at least two classes, got {0}")]
    TooFewClasses(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error("empty or inverted range [{lo}, {hi}]")]
    EmptyRange { lo: f64, hi: f64 },

    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("image: {0}")]
    Image(String),

    #[error("weights: {0}")]
    Weights(#[from] crate::netfwd::WeightsError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
