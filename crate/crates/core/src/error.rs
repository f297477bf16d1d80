//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, validation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("grid structure error: {0}")]
    Structure(String),

    #[error("extraction failed for location '{location}': {message}")]
    Extraction { location: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("collinear design: dependent columns {0:?}")]
    Collinearity(Vec<String>),

    #[error("need at least two clusters, got {0}")]
    ClusterCount(usize),

    #[error("failed to converge after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String },

    #[error("ill-conditioned covariance: smallest eigenvalue {min_eigenvalue:e}")]
    Conditioning { min_eigenvalue: f64 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("zero gradient: {0}")]
    ZeroGradient(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure is in the numerical machinery rather than the
    /// inputs (drives the CLI exit code).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInput(_)
                | Error::Collinearity(_)
                | Error::ClusterCount(_)
                | Error::Convergence { .. }
                | Error::Conditioning { .. }
                | Error::ZeroGradient(_)
                | Error::Extraction { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
