use std::path::PathBuf;

use thiserror::Error;

use crate::data::Arm;

pub type Result<T> = std::result::Result<T, Error>;

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

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: String,
        column: String,
        value: String,
    },

    #[error("row {row}: {reason}")]
    InvalidRow { row: String, reason: String },

    #[error("empty dataset")]
    Empty,

    #[error("arm {0} has no observations")]
    EmptyArm(Arm),

    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid tree document: {0}")]
    Tree(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate design: {0}")]
    Degenerate(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
