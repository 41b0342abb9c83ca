use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the GSC library.
#[derive(Debug, Error)]
pub enum GscError {
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("H = {hidden} exceeds the cap of {cap} hidden units (cost grows as 2^H)")]
    TooManyHidden { hidden: usize, cap: usize },

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("parse error in {path} at row {row}, column {col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GscError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, GscError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, GscError>;
