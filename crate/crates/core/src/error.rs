//! Error type shared by the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodiffError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("reparameterization map is not invertible: {0}")]
    SingularMap(String),
    #[error("degenerate importance weights in row {row}")]
    DegenerateWeights { row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<CodiffError>,
    },
}

impl CodiffError {
    /// Numerical breakdown, as opposed to bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        match self {
            CodiffError::SingularMap(_) | CodiffError::DegenerateWeights { .. } | CodiffError::NonFinite(_) => true,
            CodiffError::AtIteration { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// Outer iteration at which the error was raised, if known.
    pub fn iteration(&self) -> Option<usize> {
        match self {
            CodiffError::AtIteration { iter, .. } => Some(*iter),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, CodiffError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(CodiffError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
