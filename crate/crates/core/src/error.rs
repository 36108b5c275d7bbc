//! Crate-wide error type.

use crate::optim::SolveDiagnostics;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied inputs failed (bad configuration,
    /// out-of-range parameter, malformed file). Maps to CLI exit code 1.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested problem has no feasible point.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge: {context} (iterations={}, gradient mapping norm={:.3e})",
            diagnostics.iterations, diagnostics.grad_map_norm)]
    SolverFailure {
        context: String,
        diagnostics: SolveDiagnostics,
    },

    /// An objective or gradient evaluated to NaN/Inf during a solve.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Exit code the CLI should report for this error: 1 for usage/config
    /// problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Infeasible(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}
