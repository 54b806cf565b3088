use thiserror::Error;

/// Errors raised by the numerical and combinatorial routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension d={0} (need 3 <= d <= {max})", max = crate::lattice::MAX_DIM)]
    UnsupportedDimension(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty set where a non-empty one is required: {0}")]
    EmptySet(&'static str),

    #[error("quadrature did not converge at {point}: estimate {estimate:e}, tolerance {tolerance:e}")]
    Quadrature { point: String, estimate: f64, tolerance: f64 },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("iterative solve did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("size limit exceeded: {what} = {size} > {limit}")]
    TooLarge { what: &'static str, size: usize, limit: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
