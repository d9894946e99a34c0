use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("action {action} is not a feasible power split for N = {n_levels}: {reason}")]
    InfeasibleAction {
        action: u32,
        n_levels: u32,
        reason: &'static str,
    },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error(
        "relative value iteration did not converge after {iterations} iterations (span {span:e})"
    )]
    NotConverged { iterations: usize, span: f64 },

    #[error("steady state: {0}")]
    SteadyState(String),

    #[error("policy is not switching-type ({violations} adjacent violations)")]
    NotSwitching { violations: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class name, stable across releases.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::InfeasibleAction { .. } => "infeasible-action",
            Error::InstanceTooLarge(_) => "instance-too-large",
            Error::NotConverged { .. } => "not-converged",
            Error::SteadyState(_) => "steady-state",
            Error::NotSwitching { .. } => "not-switching",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
