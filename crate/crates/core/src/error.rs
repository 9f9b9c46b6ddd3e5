use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or combination of parameters is not allowed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed (non-finite values, wrong shapes, bad ids).
    #[error("data error: {0}")]
    Data(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A derived artifact was built from different inputs than the ones supplied.
    #[error("stale artifact: {what} expects {expected:016x}, found {found:016x}")]
    Stale {
        what: String,
        expected: u64,
        found: u64,
    },

    /// An artifact file exists but cannot be decoded.
    #[error("corrupt artifact {}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for command-line use: 2 for missing or unreadable
    /// artifacts, 3 for stale ones, 4 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Missing(_) | Error::Corrupt { .. } => 2,
            Error::Stale { .. } => 3,
            Error::Config(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }
}
