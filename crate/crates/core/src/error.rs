use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("output of backward must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid network: layer {index} ({layer}): {reason}")]
    InvalidLayer {
        index: usize,
        layer: String,
        reason: String,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated input while reading {what}")]
    Truncation { what: &'static str },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("manifest row {row}: missing file {path}")]
    MissingFile { row: usize, path: PathBuf },

    #[error("manifest header must be \"filename,label\", found {0:?}")]
    MalformedHeader(String),

    #[error("manifest row {row}: {detail}")]
    LabelMismatch { row: usize, detail: String },

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("objective became non-finite at step {step}")]
    NumericalFailure { step: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("class sets differ: {0:?} vs {1:?}")]
    ClassSetMismatch(Vec<String>, Vec<String>),

    #[error("parameter arity mismatch for {variant}: expected {expected}, got {found}")]
    Arity {
        variant: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0} parameterization cannot be initialized from an image")]
    FromImageUnsupported(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

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
