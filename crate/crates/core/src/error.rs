//! Shared error type for the library.

use thiserror::Error;

/// Errors raised by data loading, filtering, optimization, and backtesting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },

    #[error("cannot parse cell in {path} (row {row}, column {column}): {detail}")]
    ParseCell {
        path: String,
        row: usize,
        column: String,
        detail: String,
    },

    #[error("duplicate date {date} in {path}")]
    DuplicateDate { path: String, date: String },

    #[error("return {value} for {ticker} at {date} is not a valid simple return (must be > -1)")]
    InvalidReturn {
        date: String,
        ticker: String,
        value: f64,
    },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("date ranges have an empty intersection")]
    EmptyIntersection,

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("discount factor {name} = {value} outside (0.8, 1]")]
    InvalidDiscount { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("unknown ticker {0}")]
    UnknownTicker(String),

    #[error("date {requested} outside valid range [{min}, {max}]")]
    DateOutOfRange {
        requested: String,
        min: String,
        max: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
