use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constructor argument failed validation.
    #[error("{field} {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// An argument lies outside the domain of a closed-form expression.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "fixed-point iteration did not converge at node {node}: residual {residual:e} after {iterations} iterations"
    )]
    NoConvergence {
        node: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("root finder failed: {message} (residual {residual:e})")]
    RootNotFound { message: String, residual: f64 },

    #[error("book one-sided: density has no sign change")]
    BookOneSided,

    #[error("book exhausted: {shortfall:e} of volume could not be filled")]
    BookExhausted { shortfall: f64 },

    #[error("price {price} entered the boundary margin of the domain (half-width {half_width}) at step {step}")]
    BoundaryContamination {
        step: usize,
        price: f64,
        half_width: f64,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e @ Error::BoundaryContamination { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping step annotations.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root_cause(),
            e => e,
        }
    }
}
