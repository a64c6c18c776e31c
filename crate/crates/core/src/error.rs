use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// A file or byte stream does not follow its declared format.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors caused by bad input rather than the environment.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
