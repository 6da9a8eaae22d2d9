use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("task does not fit the design: {0}")]
    SchemaMismatch(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("model is in training mode; switch to eval before predicting")]
    NotEvalMode,

    #[error("no rows selected: {0}")]
    EmptySubset(String),

    #[error("not enough distinct rows to bootstrap: {0}")]
    InsufficientBootstrap(String),

    #[error("missing interaction estimates: expected {expected}, got {got}")]
    MissingInteraction { expected: usize, got: usize },

    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("estimates do not cover the effect slots: {0}")]
    CoverageMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    Empty,

    #[error("need at least 2 replications, got {0}")]
    InsufficientReplications(usize),

    #[error("missing aggregate: {0}")]
    MissingAggregate(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
