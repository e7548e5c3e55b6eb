use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quantile leaves domain: value {value} outside [{lo}, {hi}]")]
    QuantileLeavesDomain { value: f64, lo: f64, hi: f64 },

    #[error("map value {value} outside target interval [{lo}, {hi}]")]
    MapLeavesDomain { value: f64, lo: f64, hi: f64 },

    #[error("cost not strictly convex ({0})")]
    CostNotStrictlyConvex(String),

    #[error("source density must be positive (cell {cell} has density {value}); the source measure has to be equivalent to Lebesgue measure")]
    SourceNotPositive { cell: usize, value: f64 },

    #[error("energy model returned non-finite value: {0}")]
    NonFinite(String),

    #[error("quantile is not non-decreasing at index {index}")]
    NonMonotone { index: usize },

    #[error("mass equation unsolvable: could not bracket M (last bracket [{lo}, {hi}])")]
    MassEquationUnsolvable { lo: f64, hi: f64 },

    #[error("structural check failed: {0}")]
    Structure(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("inner proximal solve did not converge at step {step}: {iterations} iterations, projected gradient {grad_norm:e}")]
    InnerSolveFailed {
        step: usize,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("scenario {pointer}: {message}")]
    Scenario { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn scenario(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
