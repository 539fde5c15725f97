use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constitutive function was evaluated outside its domain.
    #[error("domain error: {function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    /// A model, grid or scenario parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Newton's method hit its iteration cap or the line search stalled.
    #[error("newton solver failed after {iterations} iterations (residual {residual_norm:e}): {reason}")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
        reason: &'static str,
        last_iterate: Vec<f64>,
    },

    /// Time marching failed at a given step.
    #[error("time step {step} (t = {time}) failed: {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    /// Not enough usable samples for a least-squares fit.
    #[error("decay fit needs at least 3 usable points, got {0}")]
    InsufficientData(usize),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
