//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension argument violated a construction rule (odd RoPE dimension,
    /// embedding dimension not divisible by three, ...).
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity reached a boundary that requires finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A character has no token id, or an id has no symbol.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// A token sequence exceeds the maximum model length.
    #[error("sequence too long: {0}")]
    Length(String),

    /// Malformed serialized text (sample strings, CSV rows, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// An input left its mathematical domain (latitude beyond the poles, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Cross-entropy was asked to average over zero positions.
    #[error("empty loss: every position is masked")]
    EmptyLoss,

    /// A target id or lookup index is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A JSONL record is missing a key or carries a wrong type.
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    /// Training diverged; names the first epoch/batch with a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// A checkpoint or dataset file failed structural validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
