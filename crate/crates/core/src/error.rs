use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive camera depth {depth}")]
    NonPositiveDepth { depth: f64 },

    #[error("invalid camera model: {0}")]
    InvalidCamera(String),

    #[error("transform is not rigid: {0}")]
    NotRigid(String),

    #[error("stride must be at least 1")]
    InvalidStride,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("class id {class_id} out of range for {n_classes} classes")]
    InvalidClass { class_id: usize, n_classes: usize },

    #[error("class {class} has zero samples, weight undefined")]
    ZeroCount { class: usize },

    #[error("no classes to weight")]
    EmptyCounts,

    #[error("class {class} not present in weight table")]
    UnknownClass { class: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("truncated file: {len} bytes is not a multiple of {record}")]
    TruncatedFile { len: usize, record: usize },

    #[error("corrupt header in {path}: {message}")]
    CorruptHeader { path: PathBuf, message: String },

    #[error("loss diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
