use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point outside the domain of the potential: {0}")]
    Domain(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("quadrature failed to converge (residual {residual:e}): {context}")]
    Quadrature { context: String, residual: f64 },

    #[error("zero marginal at {axis} index {index}")]
    Support { axis: &'static str, index: usize },

    #[error("ill-conditioned computation: {0}")]
    Condition(String),

    #[error("unsupported backend: {0}")]
    Unsupported(String),

    #[error("sampler failed at step {step}: {reason}")]
    Sampler { step: usize, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attach a step index to a sampler-level failure.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Sampler { reason, .. } => Error::Sampler { step, reason },
            other => Error::Sampler {
                step,
                reason: other.to_string(),
            },
        }
    }

    /// True for errors caused by malformed inputs rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Json(_) | Error::Support { .. }
        )
    }
}
