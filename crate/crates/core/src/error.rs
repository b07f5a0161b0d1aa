use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {actual}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("coverage error: {} sweep(s) missing, first: {}", .missing.len(), .missing.first().map(String::as_str).unwrap_or("?"))]
    Coverage { missing: Vec<String> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::MissingFile(_))
    }
}
