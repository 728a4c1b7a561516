use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DseError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular normal equations: {0}")]
    SingularSystem(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("worker {0} unavailable: {1}")]
    WorkerUnavailable(usize, String),
}

impl From<std::io::Error> for DseError {
    fn from(e: std::io::Error) -> Self {
        DseError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DseError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DseError {
    DseError::InvalidArgument(msg.into())
}
