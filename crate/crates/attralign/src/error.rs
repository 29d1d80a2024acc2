use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric contract was violated (non-scalar backward, NaN/Inf, index out of range).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Vocabulary or tokenization problem.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// A model/cache/prefix structural mismatch (layer counts, head geometry).
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// Invalid configuration or request.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint container format violation, with the byte offset where it was detected.
    #[error("checkpoint format error at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Corpus parsing problem, with 1-based line number.
    #[error("corpus parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
