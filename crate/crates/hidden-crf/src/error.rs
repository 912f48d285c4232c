use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        #[source]
        source: hidden_crf_core::Error,
    },
    #[error(transparent)]
    Model(#[from] hidden_crf_core::Error),
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for bad input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        let core_code = |e: &hidden_crf_core::Error| match e {
            hidden_crf_core::Error::NonFinite { .. } | hidden_crf_core::Error::Overflow => 2,
            _ => 1,
        };
        match self {
            CliError::Io { .. } | CliError::Failed(_) => 2,
            CliError::Core { source, .. } => core_code(source),
            CliError::Model(e) => core_code(e),
            CliError::Json { .. } | CliError::Invalid { .. } | CliError::Usage(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
