use crate::point::ExtendedPoint;
use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("time t = {t} is at an endpoint where the conditional path is singular")]
    EndpointSingularity { t: f64 },
    #[error("conditional path is degenerate at t = {t} (zero noise scale)")]
    DegeneratePath { t: f64 },
    #[error("field evaluated within the singularity guard radius: {0}")]
    Singularity(String),
    #[error("field is not forward-only; E_t <= 0 at {witness:?}")]
    NotForwardOnly { witness: ExtendedPoint },
    #[error("field line left the budget after {} points without reaching a plate", partial.len())]
    TruncatedTrace { partial: Vec<ExtendedPoint> },
    #[error("all posterior weights underflowed")]
    DegenerateWeights,
    #[error("estimator is degenerate: {0}")]
    DegenerateEstimate(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("velocity evaluation failed at step {step}: {source}")]
    Evaluator { step: usize, source: Box<Error> },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
