use thiserror::Error;

/// Errors raised by estimators and samplers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Carries the full spectrum so callers can report it.
    #[error("matrix is not positive definite: eigenvalue #{index} = {value:e} (spectrum {eigenvalues:?})")]
    NotPositiveDefinite {
        index: usize,
        value: f64,
        eigenvalues: Vec<f64>,
    },

    /// `best` holds the last iterate when the solver has one to offer.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        best: Option<Vec<f64>>,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for failures of a numerical procedure rather than of its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoConvergence { .. } | Error::Degenerate(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
