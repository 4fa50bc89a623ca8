use std::io;

use thiserror::Error;

/// Errors produced by the luxkit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Wrong magic bytes or an unknown format version.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Truncated or internally inconsistent file.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("corpus line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("tokenizer mismatch: model was built with `{expected}`, got `{found}`")]
    TokenizerMismatch { expected: String, found: String },

    #[error("corpus produced no ngrams")]
    EmptyCorpus,

    #[error("no teacher embedding for document `{0}`")]
    MissingTeacher(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
