//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A value violated a numeric precondition (NaN/Inf, empty input, bad range).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// An operation was called outside its contract (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A parsed file is malformed. `offset` is the byte position where parsing failed.
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    /// An action name not present in the action set.
    #[error("unknown action {name:?} in {path}")]
    UnknownAction { name: String, path: String },

    /// A transcript cannot be aligned to the frame count.
    #[error("infeasible alignment: {0}")]
    Infeasible(String),

    /// Configuration keys/values that contradict each other or are unparseable.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }
}
