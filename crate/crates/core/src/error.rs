use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("nifti error on {path}: {message}")]
    Nifti { path: PathBuf, message: String },

    #[error("malformed header in {path}: {message}")]
    MalformedHeader { path: PathBuf, message: String },

    #[error("unsupported volume format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("{count} non-finite voxels in label volume {path}")]
    NonFiniteLabels { path: PathBuf, count: usize },

    #[error("non-integer label {value} in {path}")]
    NonIntegerLabel { path: PathBuf, value: f64 },

    #[error("label {value} in {path} is outside the supported id range")]
    LabelOutOfRange { path: PathBuf, value: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("lesion id {0} is not present in the mask")]
    AbsentLesion(u16),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("case {case_id}: {message}")]
    CaseValidation { case_id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("phantom placement failed: {0}")]
    Placement(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
