use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("{kind} file has bad magic bytes {found:?}")]
    BadMagic { kind: &'static str, found: [u8; 4] },

    #[error("{kind} file has format version {found}, this build reads version {expected}")]
    UnsupportedVersion { kind: &'static str, found: u32, expected: u32 },

    #[error("corrupt {kind} file: {detail}")]
    Corrupt { kind: &'static str, detail: String },

    #[error("config {source_name}:{line}: {message}")]
    Config { source_name: String, line: usize, message: String },

    #[error("non-finite loss at step {step} (batch scene ids {scene_ids:?})")]
    NonFiniteLoss { step: usize, scene_ids: Vec<u64> },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
