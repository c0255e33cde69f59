use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("degenerate input to {op}: {detail}")]
    Degenerate { op: &'static str, detail: String },

    #[error("{op} requires a non-empty input")]
    EmptySet { op: &'static str },

    #[error("index {index} out of range for {op} (len {len})")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("document {doc_id} has no retained words")]
    DegenerateDocument { doc_id: String },

    #[error("graph sequences too short (need at least 2 graphs): {}", .patients.join(", "))]
    SequenceTooShort { patients: Vec<String> },

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite loss at {0}")]
    NonFinite(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
