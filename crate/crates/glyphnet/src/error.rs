//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("malformed glyph pool line {line}: {reason}")]
    PoolFormat { line: usize, reason: String },

    #[error("no substitutable position in {domain:?}")]
    NoSubstitutablePosition { domain: String },

    #[error("no glyph candidates for base character {0:?}")]
    MissingBase(char),

    #[error("malformed image file: {0}")]
    MalformedImage(String),

    #[error("malformed csv at {path} line {line}: {reason}")]
    CsvFormat {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint incompatible with model config: {0}")]
    CheckpointMismatch(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("scores contain a single class; need at least one positive and one negative")]
    SingleClass,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
