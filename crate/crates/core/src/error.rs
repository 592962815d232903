//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the simulator and pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("sync failure: {0}")]
    SyncFailure(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("calibration fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

/// Deserializes TOML, reporting the dotted path of the offending field.
pub(crate) fn from_toml<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    let de = toml::Deserializer::new(s);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
    })
}
