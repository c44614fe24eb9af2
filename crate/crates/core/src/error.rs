use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must have at least 4 cells per side, got {0}")]
    GridTooSmall(usize),

    #[error("grid mismatch: {left} vs {right} cells per side")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible pure-Neumann problem: net source {0:e} must vanish when mu is identically zero")]
    Incompatible(f64),

    #[error("linear solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("scattered boundary data is identically zero; nothing to image")]
    EmptyData,

    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),

    #[error("unknown example '{0}' (expected one of ex1, ex2_1, ex2_2, ex3, ex4)")]
    UnknownExample(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Numerical failures map to exit code 3, everything else to 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Incompatible(_)
                | Error::EmptyData
                | Error::ReconstructionFailed(_)
        )
    }
}
