use std::path::PathBuf;

use crate::grid::DisplacementField;

/// Errors produced by the registration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("empty ROI: {0}")]
    EmptyRoi(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate prototype at index {0} (zero norm)")]
    DegeneratePrototype(usize),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("unknown id {0}")]
    Id(usize),

    #[error("could not place blob {blob} without overlap after {attempts} attempts")]
    Placement { blob: usize, attempts: usize },

    /// Loss became non-finite; `last_field` is the last state with finite loss.
    #[error("descent diverged at iteration {iteration} (last finite loss {last_loss})")]
    Divergence {
        iteration: usize,
        last_loss: f64,
        last_field: Box<DisplacementField>,
    },

    #[error("format error in {path:?}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
