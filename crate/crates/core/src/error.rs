use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cholesky factorization failed (final jitter {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("grids differ between densities")]
    GridMismatch,

    #[error("bound check not applicable: {0}")]
    NotApplicable(String),

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    Unstable { dt: f64, limit: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
