//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },

    #[error("duplicate entry id {id:?}")]
    DuplicateId { id: String },

    #[error("invalid entry {id:?}: {reason}")]
    InvalidEntry { id: String, reason: String },

    #[error("unknown entry id {id:?}")]
    UnknownEntry { id: String },

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("unresolvable image ref {image_ref:?}")]
    BadImageRef { image_ref: String },

    #[error("embedding index is empty")]
    EmptyIndex,

    #[error("requested top {n} but only {available} candidates available")]
    TopNTooLarge { n: usize, available: usize },

    #[error("unknown template {name:?}")]
    UnknownTemplate { name: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("no mock rule matches the request (and no fallback is set)")]
    MockNoMatch,

    #[error("invalid mock rule at line {line}: {message}")]
    MockRule { line: usize, message: String },

    #[error("action space is empty")]
    EmptyActionSpace,

    #[error("no reasoning candidates produced for entry {id:?}")]
    NoCandidates { id: String },

    #[error("vocabulary has {size} relations, need at least {need}")]
    VocabularyTooSmall { size: usize, need: usize },

    #[error("invalid embedding file: {0}")]
    Sidecar(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
