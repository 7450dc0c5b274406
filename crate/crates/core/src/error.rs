use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid label {0}, expected 0 (real) or 1 (fake)")]
    InvalidLabel(u8),

    #[error("empty vector")]
    EmptyVector,

    #[error("mode {mode} is not valid here: {reason}")]
    Mode { mode: String, reason: String },

    #[error("trace does not match configuration: {0}")]
    TraceMismatch(String),

    #[error("AUC is undefined: {0}")]
    SingleClass(String),

    #[error("group {0} mixes real and fake samples")]
    MixedGroup(u32),

    #[error("missing group ids for video-level aggregation")]
    MissingGroups,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("refusing to allocate {requested} scalars (cap {cap})")]
    TooLarge { requested: u64, cap: u64 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }
}
