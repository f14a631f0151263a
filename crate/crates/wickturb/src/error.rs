use thiserror::Error;

/// Errors raised across the crate. Validation-type errors map to exit code 1,
/// budget/capacity errors to exit code 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("capacity exceeded: {what} would need {needed} items, limit is {limit}")]
    Capacity { what: String, needed: u128, limit: u128 },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("sign mismatch: expected {expected}, found {found}")]
    SignMismatch { expected: i8, found: i8 },
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("invalid pair index {0}")]
    InvalidPair(usize),
    #[error("couple is not regular")]
    NonRegular,
    #[error("paired leaves carry different values (pair {0})")]
    PairingViolation(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("solver instability: {0}")]
    Instability(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation problems, 2 for runtime budget problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity { .. }
            | Error::Budget(_)
            | Error::NonConvergence(_)
            | Error::Instability(_)
            | Error::Io(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
