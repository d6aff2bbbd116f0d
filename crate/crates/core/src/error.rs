use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state {state:?} is outside the state constraint set (U(x) is empty)")]
    InfeasibleState { state: Vec<f64> },

    #[error(
        "integration diverged at t = {time}: state norm {norm:e} exceeds the divergence threshold"
    )]
    Divergence { time: f64, norm: f64 },

    #[error("optimal control problem infeasible: max constraint violation {max_violation:e} after full penalty escalation")]
    InfeasibleOcp { max_violation: f64 },

    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("sampling region is empty: {0}")]
    EmptyRegion(String),

    #[error("domain error: {message} (hint: {hint})")]
    Domain { message: String, hint: String },

    #[error("LQR rollout from {state:?} violates constraints by {violation:e}; neighbourhood radius too large")]
    ConstraintActive { state: Vec<f64>, violation: f64 },

    #[error("kernel construction failed from {state:?}: {reason}")]
    ConstructionFailure { state: Vec<f64>, reason: String },

    #[error("state {state:?} lies outside the viability kernel")]
    OutsideKernel { state: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(message: impl Into<String>, hint: impl Into<String>) -> Self {
        Error::Domain {
            message: message.into(),
            hint: hint.into(),
        }
    }
}
