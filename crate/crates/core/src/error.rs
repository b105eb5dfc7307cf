//! Error types shared by the whole pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `offset` is the byte position of the offending field.
    #[error("parse error in {path} at byte {offset}: {what}")]
    Parse {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sorted run file was not actually sorted.
    #[error("unsorted run {path}: record at byte {offset} sorts before its predecessor")]
    UnsortedRun { path: PathBuf, offset: u64 },

    /// A stage was started without the artifacts of its predecessor.
    #[error("stage '{stage}' needs the checkpoint written by stage '{missing}'; run that stage first")]
    MissingCheckpoint { stage: String, missing: String },

    /// Internal invariants out of sync (corrupted artifacts, seam mismatch, ...).
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, offset: u64, what: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            what: what.into(),
        }
    }
}
