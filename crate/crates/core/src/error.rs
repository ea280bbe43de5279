use thiserror::Error;

use crate::kernels::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The first-order expansion is usable but loses accuracy; `approx` is the
    /// first-order value, callers may fall back to the exact swap formula.
    #[error("first-order expansion ratio {ratio:.4} exceeds the accuracy threshold 0.1")]
    ExpansionWarning { ratio: f64, approx: f64 },

    #[error("first-order expansion ratio {ratio:.4} exceeds the validity limit 0.5")]
    ExpansionInvalid { ratio: f64 },

    #[error("invalid kernel set: {0}")]
    InvalidKernel(String),

    #[error("kernel fit did not converge after {iterations} iterations (best rms {:.3e})", best.rms)]
    FitNotConverged {
        iterations: usize,
        best: Box<FitResult>,
    },

    /// Drift condition `mu < 3 sigma^2 / 4 + 4 min_j rho_j` fails, so the impact
    /// matrix is not positive definite and the schedule is not unique.
    #[error(
        "impact matrix is not positive definite: drift {mu} must be below 3*sigma^2/4 + 4*min(rho) = {bound}"
    )]
    NotPositiveDefinite { mu: f64, bound: f64 },

    #[error("numerical factorization failed: {0}")]
    Factorization(String),

    #[error("one-step objective is not concave at step {step} (phi = {phi:.3e})")]
    NonConcave { step: usize, phi: f64 },

    #[error("degenerate price grid: {0}")]
    DegenerateGrid(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by the numerical problem itself rather than
    /// by malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Factorization(_)
                | Error::NonConcave { .. }
                | Error::FitNotConverged { .. }
        )
    }
}
