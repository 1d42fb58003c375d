use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("bad manifest schema: {0}")]
    BadSchema(String),

    #[error("bad npy header: {0}")]
    BadHeader(String),

    #[error("array must be {expected}-D, found shape {found:?}")]
    WrongRank { expected: usize, found: Vec<usize> },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("head tensor reconstruction failed: max row error {max_error:e} at image {row}")]
    ReconstructionFailure { max_error: f64, row: usize },

    #[error("training set contains a single class")]
    SingleClass,

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("direction is degenerate (zero vector)")]
    DegenerateDirection,

    #[error("row {0} is the zero vector")]
    ZeroRow(usize),

    #[error("lexicon space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: String, found: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("empty subset for metric {0}")]
    EmptySubset(&'static str),

    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),

    #[error("unknown domain id {0:?}")]
    UnknownDomain(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimMismatch {
            expected,
            found,
            context: context.into(),
        }
    }
}
