use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MinerError>;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("schema error in document `{doc_id}`, field `{field}`: {message}")]
    Schema {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("span error in document `{doc_id}`: {message}")]
    Span { doc_id: String, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("opening [{opening_start}, {opening_end}) overlaps closing [{closing_start}, {closing_end})")]
    Overlap {
        opening_start: usize,
        opening_end: usize,
        closing_start: usize,
        closing_end: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("synthetic pool exhausted: needed {needed} distinct surfaces, pool has {available}")]
    PoolExhausted { needed: usize, available: usize },

    #[error("coordinate error: {0}")]
    Coord(String),

    #[error("placeholder leakage: evaluation input `{0}` contains the municipality placeholder")]
    Leakage(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MinerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MinerError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn span(doc_id: &str, message: impl Into<String>) -> Self {
        MinerError::Span {
            doc_id: doc_id.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn schema(doc_id: &str, field: &str, message: impl Into<String>) -> Self {
        MinerError::Schema {
            doc_id: doc_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}
