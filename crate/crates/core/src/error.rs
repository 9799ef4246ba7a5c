use std::io;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("event outside sensor geometry: {0}")]
    Geometry(String),

    #[error("degenerate duration: {0}")]
    DegenerateDuration(String),

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("sparsity undefined: no neuron-timesteps recorded")]
    UndefinedSparsity,

    #[error("class {0} missing from dataset")]
    MissingClass(usize),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error at {path}: {source}")]
    IoAt {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io_at(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::MissingClass(_) => 2,
            Error::Io(_)
            | Error::IoAt { .. }
            | Error::Malformed(_)
            | Error::Geometry(_)
            | Error::CorruptContainer(_) => 3,
            Error::Numeric(_) => 4,
            _ => 4,
        }
    }
}
