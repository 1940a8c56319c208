//! Error type shared by all library modules.

/// Errors surfaced by tensor ops, data handling and the training harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range [0, {bound})")]
    LabelRange { label: usize, bound: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),

    #[error("coordinate out of domain: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
