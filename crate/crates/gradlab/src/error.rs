use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("tensor shape {shape:?} implies {expected} elements, data has {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid range: lo={lo} must be strictly below hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible sampling request: {0}")]
    InfeasibleSampling(String),

    #[error("malformed IDX file {path}: {reason}")]
    BadIdx { path: String, reason: String },

    #[error("no class has a bias gradient above the divisor threshold")]
    NothingInvertible,

    #[error("no recovered vector matches a batch label")]
    NoMatchedClasses,

    #[error("divisor is zero in {0}")]
    ZeroDivisor(&'static str),

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("bad snapshot file {path}: {reason}")]
    BadSnapshot { path: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
