use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse type {input:?} at position {position}: {message}")]
    TypeParse { input: String, position: usize, message: String },

    #[error("refusing to enumerate types of depth {max_depth}: more than 4e8 types")]
    EnumerationTooLarge { max_depth: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("attention over an empty candidate set")]
    EmptyCandidates,

    #[error("backward needs a scalar loss, got a value of length {0}")]
    NonScalarLoss(usize),

    #[error("empty sentence")]
    EmptySentence,

    #[error("span ({start}, {end}) out of range for a sentence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("chart is missing its {0} pass")]
    IncompleteChart(&'static str),

    #[error("type of depth {depth} exceeds decoder depth {max}")]
    UnsupportedDepth { depth: usize, max: usize },

    #[error("distribution depth mismatch: {0} vs {1}")]
    DepthMismatch(usize, usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("percentile filter at {threshold} kept no records")]
    EmptyFilter { threshold: f64 },

    #[error("{k}-fold evaluation needs at least {k} records, got {n}")]
    TooFewRecords { k: usize, n: usize },

    #[error("stage order violated: {0}")]
    StageOrder(String),

    #[error("{path}: row {row}: {message}")]
    Data { path: String, row: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
