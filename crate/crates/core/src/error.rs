use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {message} (last iterate {last})")]
    NumericFailure { message: String, last: f64 },

    #[error("posterior under the {prior} prior does not normalize (tail did not decay before tau = {tau_cap:e})")]
    DivergedPosterior { prior: String, tau_cap: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, last: f64) -> Self {
        Error::NumericFailure {
            message: msg.into(),
            last,
        }
    }
}
