use thiserror::Error;

use crate::linqr::QrSolution;

#[derive(Debug, Error)]
pub enum MkqrError {
    /// A design or plug-in matrix is singular to working precision.
    #[error("rank deficient {what}: column `{column}` is collinear with the others{advice}")]
    Rank {
        what: &'static str,
        column: String,
        advice: String,
    },
    /// The interior point iteration hit its cap. The last iterate is kept.
    #[error("quantile regression did not converge in {iterations} iterations (duality gap {gap:.3e})")]
    Convergence {
        iterations: usize,
        gap: f64,
        last: Box<QrSolution>,
    },
    #[error("bandwidth {bandwidth:.4} pushes tau = {tau} +/- h outside (0, 1)")]
    Bandwidth { tau: f64, bandwidth: f64 },
    #[error("only {usable} of {requested} bootstrap replicates were usable")]
    DegenerateBootstrap { usable: usize, requested: usize },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{0}")]
    Usage(String),
}

impl MkqrError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        MkqrError::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        MkqrError::Data(msg.into())
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MkqrError::Rank { .. }
                | MkqrError::Convergence { .. }
                | MkqrError::Bandwidth { .. }
                | MkqrError::DegenerateBootstrap { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, MkqrError>;
