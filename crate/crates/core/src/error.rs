use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the completion pipeline.
#[derive(Debug, Error)]
pub enum SfaError {
    /// Input outside an operation's mathematical domain (empty clouds, non-positive radii...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Sizes that do not fit together.
    #[error("size error: {0}")]
    Size(String),

    /// Invalid configuration; the message names the violated constraint.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values in weights, inputs or losses.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `line` is 1-based and only set for text records.
    #[error("parse error in {path} at byte {offset}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        offset: u64,
        line: Option<usize>,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, SfaError>;

impl SfaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfaError::Io {
            path: path.into(),
            source,
        }
    }
}
