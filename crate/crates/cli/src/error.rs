use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dilseg_core::Error),

    #[error(transparent)]
    Nn(#[from] dilseg_nn::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing upstream artifact {path}: run `{command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported device {0:?}; only \"cpu\" is available")]
    Device(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
