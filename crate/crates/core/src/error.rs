use std::path::PathBuf;

/// Errors raised by kernel evaluation, FIRE, constructions and the micro-LM.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate query position {i}: unthresholded normalizer needs i >= 1")]
    DegeneratePosition { i: usize },

    #[error("degenerate softmax row {row}: every entry is masked")]
    DegenerateRow { row: usize },

    #[error("non-differentiable configuration: {0}")]
    NonDifferentiable(String),

    #[error("construction out of range: {0}")]
    ConstructionOutOfRange(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
