use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Dimension;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed transcript at byte offset {offset}: {message}")]
    TranscriptParse { offset: usize, message: String },

    #[error("session {0} contains no detected speech")]
    EmptySession(String),

    #[error("labels line {line}: {message}")]
    LabelValidation { line: u64, message: String },

    #[error("session {session_id} has no {dimension} label")]
    MissingLabel {
        session_id: String,
        dimension: Dimension,
    },

    #[error("duplicate session id {0}")]
    DuplicateSession(String),

    #[error("vocabulary needs {requested} n-grams but only {available} candidates exist")]
    UnderfullVocabulary { requested: usize, available: usize },

    #[error("malformed vocabulary file line {line}: {message}")]
    VocabularyFormat { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("backend contract violated: {0}")]
    BackendContract(String),

    #[error("backend transport: {0}")]
    Transport(String),

    #[error(
        "request failed for session {session_id}, utterance {utterance_index}, indicator {indicator:?}: {message}"
    )]
    RequestFailed {
        session_id: String,
        utterance_index: usize,
        indicator: String,
        message: String,
    },

    #[error("unknown indicator {0:?}")]
    UnknownIndicator(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
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
