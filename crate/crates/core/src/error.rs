use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ray: {0}")]
    InvalidRay(String),

    #[error("position {0:?} lies outside the contracted domain [-2, 2]^3")]
    OutOfDomain([f64; 3]),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("size mismatch in {file}: expected {expected} bytes, found {found}")]
    SizeMismatch { file: String, expected: usize, found: usize },

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),

    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error at {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("malformed manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}
