use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("label conflict for index {index}: {reason}")]
    LabelConflict { index: usize, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("invalid trainer state: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
