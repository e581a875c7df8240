use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are grouped by who is at fault: shape and config errors are
/// caller mistakes, data/checkpoint errors come from the filesystem side.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate batch in {op}: {count} value(s) per channel, need at least 2")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint mismatch on tensor `{name}`: {msg}")]
    CheckpointMismatch { name: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
