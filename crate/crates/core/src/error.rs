//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset handling, training, analysis and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group {group} is empty in this batch; use group-proportionate sampling so every group is represented")]
    EmptyGroupInBatch { group: String },

    #[error("group {group} missing from {what}")]
    MissingGroup { group: String, what: String },

    #[error("group {group} has {size} training examples, below the minimum of {min}")]
    GroupTooSmall {
        group: String,
        size: usize,
        min: usize,
    },

    #[error("batch size {batch_size} is smaller than the number of groups {n_groups}")]
    BatchTooSmall { batch_size: usize, n_groups: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("digest mismatch for {path}: expected {expected}, got {actual}")]
    DigestMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    #[error("download failed for {url}: {reason}")]
    Fetch { url: String, reason: String },

    #[error("column {0} not found in schema")]
    UnknownColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
