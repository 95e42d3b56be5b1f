use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: nse_core::Error,
    },
    #[error(transparent)]
    Engine(#[from] nse_core::Error),
    #[error("report: {0}")]
    Report(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        let engine = match self {
            CliError::Engine(e) | CliError::Layer { source: e, .. } => Some(e),
            _ => None,
        };
        match engine {
            Some(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
