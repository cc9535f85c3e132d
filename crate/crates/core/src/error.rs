use thiserror::Error;

/// Errors produced by the qutrit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A state vector (or set of components) has zero norm.
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid wave-plate setting: {0}")]
    InvalidPlate(String),

    /// The measurement design cannot determine every state parameter.
    #[error("incomplete protocol: {0}")]
    IncompleteProtocol(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Internal consistency check on a computed quantity failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
