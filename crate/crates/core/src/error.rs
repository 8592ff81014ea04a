use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("iterative solver did not converge: {0}")]
    Convergence(String),

    #[error("behavior chain is reducible: {0}")]
    Reducible(String),

    #[error("behavior chain is periodic with period {0}")]
    Periodic(usize),

    #[error("singular or ill-conditioned system: {0}")]
    Rank(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("coverage violation: behavior probability is zero for state {state}, action {action}")]
    Coverage { state: usize, action: usize },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}
