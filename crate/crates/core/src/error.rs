use std::fmt;

use crate::field::GridFunction;

/// Errors raised by the laboratory.
///
/// Variants are grouped by the exit code the command-line driver maps them
/// to: configuration and validity problems (2), solver nonconvergence (3) and
/// invariant violations (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("divergent integral: {0}")]
    Divergence(String),

    #[error("invalid input: {0}")]
    Validity(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("time integration failed: {0}")]
    Integration(String),

    #[error("front left the window: {0}")]
    Window(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("Newton iteration stagnated at residual {residual:e} after {iterations} iterations")]
    Nonconvergence {
        residual: f64,
        iterations: usize,
        best: Box<Iterate>,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error(
        "wave speed {speed:e} is below the zero-speed guard {guard:e}; \
         zero-speed fronts are not handled"
    )]
    ZeroSpeed { speed: f64, guard: f64 },

    #[error("no sign change of {function} inside the analyticity window ({lo}, {hi})")]
    RootBeyondWindow { function: String, lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(
        "exponential-ratio condition fails: k = {k:e}, k_hat = {k_hat:e}; the tail \
         ratio may sit on its zero branch"
    )]
    ConditionFailure { k: f64, k_hat: f64 },

    #[error("diagnostic: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Best iterate reached by a failed Newton solve.
#[derive(Clone)]
pub struct Iterate {
    pub profile: GridFunction,
    pub speed: f64,
}

impl fmt::Debug for Iterate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Iterate")
            .field("points", &self.profile.len())
            .field("speed", &self.speed)
            .finish()
    }
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence(_)
            | Error::Nonconvergence { .. }
            | Error::Integration(_)
            | Error::Window(_)
            | Error::RootBeyondWindow { .. } => 3,
            Error::InvariantViolation(_) | Error::ConditionFailure { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
