use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate track: {0}")]
    DegenerateTrack(&'static str),

    #[error("{name} = {value} is outside {range}")]
    Range {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("problem size {size} exceeds limit {limit} for {context}")]
    Size {
        context: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("activation pattern changed in row {row}; shrink the step size")]
    PatternFlip { row: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("format error in {file} at byte offset {offset}: {message}")]
    Format {
        file: String,
        offset: u64,
        message: String,
    },

    #[error("truncated file {file}: expected {expected} bytes, found {actual}")]
    Truncated {
        file: String,
        expected: u64,
        actual: u64,
    },

    #[error("checksum mismatch: expected {expected}, found {actual}")]
    Checksum { expected: String, actual: String },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is numerical (divergence, pattern flips) rather
    /// than bad input. Front ends map the two classes to different exit codes.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::PatternFlip { .. } | Error::NonFinite(_)
        )
    }
}
