use std::io;

/// Errors produced by the simulator, the attacks and the front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or parameter combination violates a model invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two traces or spectra that must line up do not.
    #[error("shape error: {0}")]
    Shape(String),

    /// A data file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
