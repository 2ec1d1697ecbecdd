use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: empty input")]
    EmptyInput { path: PathBuf },

    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: u64, label: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("class {class:?}: requested {requested} records, only {available} available")]
    InsufficientClass {
        class: String,
        requested: usize,
        available: usize,
    },

    #[error("class {0:?} has no mapping")]
    Unmapped(String),

    #[error("label index {0} out of range")]
    LabelRange(usize),

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("training task {task:?} failed: {source}")]
    Task {
        task: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("protocol: {0}")]
    Protocol(#[from] crate::protocol::ProtocolError),

    #[error("runtime: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
