//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset or dictionary line could not be parsed. Carries the
    /// 1-based line number so the offending record can be found.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Tensor shapes (or axes/indices) incompatible with an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Graph construction or traversal violated a precondition.
    #[error("graph error: {0}")]
    Graph(String),

    /// Vocabulary construction or lookup failed.
    #[error("vocab error: {0}")]
    Vocab(String),

    /// Invalid configuration key, value, or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file malformed or inconsistent with the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training diverged (non-finite loss or gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The external triple-extraction process failed.
    #[error("extractor error: {0}")]
    Extractor(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Helper for parse errors with positional context.
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
