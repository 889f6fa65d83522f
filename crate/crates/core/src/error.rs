use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum MmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("point outside domain: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("descent violated at iteration {iteration}: f went from {before} to {after}")]
    DescentViolation {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("majorization violated at iteration {iteration}: {detail}")]
    MajorizationViolation { iteration: usize, detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("iteration diverged after {iterations} steps (norm {norm:e} > bound {bound:e})")]
    Divergence {
        iterations: usize,
        norm: f64,
        bound: f64,
    },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),
}

pub type Result<T, E = MmError> = std::result::Result<T, E>;
