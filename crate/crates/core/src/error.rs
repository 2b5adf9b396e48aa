use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown grouping method id {0}")]
    UnknownGrouping(u8),

    #[error("unknown profile `{0}`")]
    UnknownProfile(String),

    #[error("mixer update overlaps already processed pixels at ({row}, {col})")]
    MaskOverlap { row: usize, col: usize },

    #[error("no unprocessed pixels remain for dynamic grouping")]
    EmptyRemainder,

    #[error("range coder: {0}")]
    Coder(String),

    #[error("corrupt container: {0}")]
    Container(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("model hash mismatch: container expects {expected}, checkpoint is {actual}")]
    ModelHash { expected: String, actual: String },

    #[error("checkpoint does not match profile: {0}")]
    ProfileMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Self {
        Error::Shape {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
