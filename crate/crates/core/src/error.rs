use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine. Each variant maps onto one class of CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, state).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("event ({x}, {y}) outside sensor geometry {width}x{height}")]
    Geometry {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("triangulation error: {0}")]
    Triangulation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
