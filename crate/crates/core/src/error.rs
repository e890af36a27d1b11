use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("undefined ratio at index {index}: baseline value is zero")]
    UndefinedRatio { index: usize },

    #[error("simulation aborted at step {step}: {message}")]
    SimulationAbort {
        step: usize,
        message: String,
        /// Positions of the offending frame, for diagnostics.
        positions: Vec<[f64; 3]>,
    },

    #[error("training diverged at step {step}: {message}")]
    Diverged {
        step: usize,
        message: String,
        /// Parameters after the last step with a finite loss.
        last_good: Box<crate::backbone::ModelState>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
