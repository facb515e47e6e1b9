use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { what: String, iterations: usize, residual: f64 },
    #[error("spectral parameter {re}{im:+}i lies within the pole guard")]
    NearPole { re: f64, im: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn not_converged(what: impl Into<String>, iterations: usize, residual: f64) -> Self {
        Error::NotConverged { what: what.into(), iterations, residual }
    }

    /// True for input problems, as opposed to numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Unsupported(_))
    }
}
