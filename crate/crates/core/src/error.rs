use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("bad index file magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),

    #[error("index file truncated: section `{section}` is missing or incomplete")]
    Truncated { section: String },

    #[error("corrupt index: {0}")]
    Corrupt(String),

    #[error("batch {batch} needs {bytes} bytes, over the memory cap of {cap} bytes")]
    OverBudget { batch: usize, bytes: u64, cap: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
