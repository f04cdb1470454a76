use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical overflow in {0}")]
    NumericalOverflow(&'static str),

    #[error("share inversion did not converge after {iterations} iterations (residual {residual:e})")]
    InversionFailure { iterations: usize, residual: f64 },

    #[error("every taste draw has a non-negative price coefficient; consumer surplus is undefined")]
    DegenerateSurplus,

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("optimizer did not converge: {message}")]
    OptimizerFailure { message: String, trace: Vec<f64> },

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("missing prerequisite artifact {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("market {market} ({stage}): {source}")]
    Market {
        market: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

/// Coarse failure class, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn in_market(self, market: impl Into<String>, stage: &'static str) -> Self {
        Error::Market {
            market: market.into(),
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Market { source, .. } => source.kind(),
            Error::NumericalOverflow(_)
            | Error::InversionFailure { .. }
            | Error::DegenerateSurplus
            | Error::Singular(_)
            | Error::Numerical(_)
            | Error::NonConvergence { .. }
            | Error::OptimizerFailure { .. }
            | Error::NotPositiveSemidefinite { .. } => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn dimension(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
