use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidTokenId { id: u32, vocab_size: usize },

    #[error("vocabulary file: {0}")]
    VocabFormat(String),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("config/tensor mismatch: {0}")]
    ConfigMismatch(String),

    #[error("keep_blocks={keep} outside 1..={n_blocks}")]
    BlockRange { keep: usize, n_blocks: usize },

    #[error("k={k} exceeds the {max} samplable tokens")]
    TooManyLabels { k: usize, max: usize },

    #[error("prediction has no tokens")]
    EmptyPrediction,

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
