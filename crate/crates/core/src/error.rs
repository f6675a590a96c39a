use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate attention row {row}: every key is blocked")]
    DegenerateRow { row: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("length error: prompt has {len} tokens, limit is {max}")]
    Length { len: usize, max: usize },
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("shape error for tensor `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status for this error: 2 config, 3 numeric, 4 format, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) => 2,
            Error::Numeric(_) => 3,
            Error::Format(_) | Error::Shape { .. } => 4,
            _ => 1,
        }
    }
}
