use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point had non-positive depth in the camera frame.
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0}: depth must be strictly positive")]
    InvalidDepth(f64),

    #[error("invalid hypothesis count {0}: need at least 2")]
    InvalidCount(usize),

    #[error("configuration error: {0}")]
    Config(String),

    /// A mean over valid pixels was requested but no pixel was valid.
    #[error("empty domain: no valid pixels")]
    EmptyDomain,

    #[error("scene validation failed: {0}")]
    SceneValidation(String),

    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error: source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
