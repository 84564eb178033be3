//! Crate-wide error type.

use crate::exprs::{EvalError, ExprError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("hypothesis fails: {0}")]
    Hypothesis(String),
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("maximum number of steps exceeded at t={t}")]
    MaxSteps { t: f64 },
    #[error("no event before time-out ({0})")]
    TimeOut(String),
    #[error("{0} is not bracketed")]
    NoBracket(String),
    #[error("root finder did not converge: {0}")]
    NoConvergence(String),
    #[error("quadrature tolerance not met (error estimate {estimate:e})")]
    Quadrature { estimate: f64 },
    #[error("outside the domain of the map: {0}")]
    Domain(String),
    #[error("forward flow not unique: {0}")]
    Ambiguous(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// True when the failure says something about the model rather than the numerics.
    pub fn is_hypothesis(&self) -> bool {
        matches!(self, Error::Hypothesis(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
