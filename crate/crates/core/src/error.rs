use thiserror::Error;

use crate::model::ModelState;

#[derive(Debug, Error)]
pub enum Error {
    /// Two fields, or a field and a coefficient, live on different grids, or an
    /// array has the wrong length for its grid.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("range error: {0}")]
    Range(String),

    /// A precondition of a closed-form constant is violated.
    #[error("hypothesis failure: {clause} (lhs = {lhs}, rhs = {rhs})")]
    HypothesisFailure { clause: String, lhs: f64, rhs: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// The step-size controller rejected steps down to `dt_min`. The last
    /// accepted state is kept for post-mortem inspection.
    #[error("step size underflow at t = {t}: dt = {dt} < dt_min ({reason})")]
    StepSizeUnderflow {
        t: f64,
        dt: f64,
        reason: String,
        state: Box<ModelState>,
    },

    #[error("clamped mass {clamped:e} exceeds budget {budget:e}")]
    ClampBudgetExceeded { clamped: f64, budget: f64 },

    #[error("observer failed at t = {t}: {message}")]
    Observer { t: f64, message: String },

    #[error("t_back insufficient: seed gap {gap:e} exceeds tolerance {tol:e}")]
    TBackInsufficient { gap: f64, tol: f64 },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
