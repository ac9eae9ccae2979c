//! Crate-wide error type.

use thiserror::Error;

use crate::graph::BuildReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed corpus/queries record, with the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// Embedding backend failure. `request_index` points at the offending
    /// request within the submitted batch when known.
    #[error("embedding backend error{}: {message}", request_index.map(|i| format!(" (request {i})")).unwrap_or_default())]
    EmbeddingBackend {
        request_index: Option<usize>,
        message: String,
    },

    /// Build aborted partway through; the report carries whatever stage
    /// counts and timings were collected before the failure.
    #[error("graph build aborted: {message}")]
    BuildAborted {
        report: Box<BuildReport>,
        message: String,
    },

    #[error("index format error: {0}")]
    IndexFormat(String),

    #[error("unknown node id: {0}")]
    UnknownNode(String),

    #[error("node {0} is not a coarse node")]
    NotCoarse(String),

    #[error("graph has no coarse nodes")]
    EmptyGraph,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("gold set is empty")]
    EmptyGold,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
