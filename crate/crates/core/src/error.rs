use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("label space mismatch: {0}")]
    LabelMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Failures specific to reading or applying a checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:?}, expected \"GSMO\"")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u8, expected: u8 },

    #[error("truncated payload while reading {field}")]
    Truncated { field: String },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("parameter {name} in group {group}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        group: String,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("config field {field} disagrees: {detail}")]
    ConfigMismatch { field: String, detail: String },

    #[error("parameter {0} missing from checkpoint")]
    MissingParameter(String),
}
