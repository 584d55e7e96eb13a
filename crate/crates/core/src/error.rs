use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("kernel decomposition has no V1/V2 split")]
    MissingSplit,
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("all {0} paths failed")]
    AllPathsFailed(usize),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("infeasible region: {0}")]
    Infeasible(String),
    #[error("degenerate regression: {0}")]
    DegenerateFit(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
