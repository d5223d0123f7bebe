//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: String },

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown category `{value}` for feature `{feature}` at data row {row}")]
    Vocabulary {
        feature: String,
        value: String,
        row: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate class distribution: {0}")]
    DegenerateClass(String),

    #[error("anchor error: {0}")]
    Anchor(String),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("external method failed (exit {status}): {detail}")]
    ExternalMethod { status: String, detail: String },

    #[error("external protocol violation: {0}")]
    Protocol(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
