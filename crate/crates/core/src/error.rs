use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter values detected before any solve.
    #[error("configuration error: {0}")]
    Config(String),

    /// Newton iteration failed to reach the requested residual.
    #[error("solver error at step {step}: Newton did not converge within {iters} iterations (last residual {residual:.3e})")]
    NewtonDiverged {
        step: usize,
        iters: usize,
        residual: f64,
    },

    /// Direct factorization of a step system failed or produced non-finite values.
    #[error("linear algebra error at step {step}: {detail}")]
    LinearSolve { step: usize, detail: String },

    /// Projected-gradient line search stalled.
    #[error("line search stagnated at optimizer iteration {iter} (objective {objective:.6e})")]
    LineSearchStagnation { iter: usize, objective: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI contract: 2 audit, 3 solver, 4 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 4,
            Error::NewtonDiverged { .. }
            | Error::LinearSolve { .. }
            | Error::LineSearchStagnation { .. } => 3,
            Error::Io(_) => 3,
        }
    }
}
