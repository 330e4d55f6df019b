use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// Kernel evaluated at coincident points.
    #[error("diagonal evaluation: the two points coincide")]
    Diagonal,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(
        "no convergence after {iterations} iterations (last marginal violation {violation:.3e})"
    )]
    Convergence { iterations: usize, violation: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
