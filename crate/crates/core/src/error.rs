use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("resolution failure: {0}")]
    Resolution(String),
    #[error("eigensolver failed: {0}")]
    Convergence(String),
    #[error("separation condition violated: {0}")]
    Certification(String),
    #[error("linear solve breakdown: {0}")]
    LinearSolve(String),
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
