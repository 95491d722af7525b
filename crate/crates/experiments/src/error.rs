use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("grid point {index} ({value}): {source}")]
    Point {
        index: usize,
        value: f64,
        #[source]
        source: gmdesign_core::Error,
    },

    #[error(transparent)]
    Core(#[from] gmdesign_core::Error),
}

impl ExperimentError {
    /// Process exit code: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Parse { .. } | ExperimentError::Validation { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExperimentError::Io { path: path.into(), source }
    }
}
