use std::io;
use std::path::PathBuf;

use epuf_core::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Config { path: PathBuf, line: usize, msg: String },
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] epuf_core::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl Error {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    pub(crate) fn invalid(key: &str, msg: impl Into<String>) -> Error {
        Error::InvalidValue {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
