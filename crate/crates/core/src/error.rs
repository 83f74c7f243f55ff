use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid linear program: {0}")]
    InvalidProgram(String),

    #[error("problem too large: {what} = {size} exceeds cap {cap}")]
    TooLarge {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("numerical breakdown in simplex: {0}")]
    NumericalBreakdown(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("atom {index} at {point:?} is not a grid node")]
    OffGrid { index: usize, point: Vec<f64> },

    #[error("atom {index} at {point:?} lies on the grid boundary")]
    OnBoundary { index: usize, point: Vec<f64> },

    #[error("atom {index} at {point:?} lies outside the grid domain")]
    OutsideDomain { index: usize, point: Vec<f64> },

    #[error("cone is empty over the candidate support")]
    ConeEmpty,

    #[error("envelope solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("mismatched instances: {0}")]
    Mismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;
