//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    Definiteness { pivot: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("graphical lasso did not converge after {sweeps} sweeps (duality gap {gap:e})")]
    Convergence { sweeps: usize, gap: f64 },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("non-finite gradient for parameter `{param}`")]
    Numeric { param: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Broad failure class, used by the command line to pick an exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Shape(_) => ErrorClass::Usage,
            Error::Range(_) | Error::Data(_) | Error::Parse { .. } | Error::Io(_) => ErrorClass::Data,
            Error::Definiteness { .. } | Error::Convergence { .. } | Error::Tape(_) | Error::Numeric { .. } => {
                ErrorClass::Numeric
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}
