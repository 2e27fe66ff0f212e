use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("explicit Hessian unavailable: {0}")]
    HessianUnavailable(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("cubic subsolver diverged at step {step}")]
    SolverDivergence { step: usize },

    #[error("iteration budget of {0} exceeded")]
    BudgetExceeded(usize),

    #[error("non-finite objective value at iteration {0}")]
    NonFiniteObjective(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
