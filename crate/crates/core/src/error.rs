//! Error type shared by the solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("coercivity failure: lower envelope slope {a} is not positive")]
    CoercivityFailure { a: f64 },

    #[error(
        "CFL violated: 2*eps*s/dx^2 + C_H(L)*s/dx = {lhs:.6} > 1 (L = {lipschitz:.6}); \
         pass allow_unstable to override"
    )]
    CflViolated { lhs: f64, lipschitz: f64 },

    #[error("scalar solver failed: {0}")]
    SolverFailure(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<SolverError>,
    },

    #[error("infeasible CFL spec: {0}")]
    InfeasibleCfl(String),
}

impl SolverError {
    pub(crate) fn at_step(self, step: usize) -> SolverError {
        SolverError::StepFailed {
            step,
            source: Box::new(self),
        }
    }
}
