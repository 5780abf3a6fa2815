use thiserror::Error;

/// Errors raised by the solvers and their building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("diagonal entry {index} is not positive ({value:e})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("incomplete Cholesky did not succeed after {attempts} diagonal shifts")]
    FactorizationBreakdown { attempts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("newton step {step} failed: {source}")]
    NewtonStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("integration blew up at t = {time}")]
    BlowUp { time: f64 },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
