use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance too large for {what}: {size} exceeds limit {limit}")]
    InstanceTooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("pivotal set is empty")]
    EmptyPivotalSet,

    #[error("minimiser is a singular point; the non-singular formula does not apply")]
    SingularCase,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn env(msg: impl Into<String>) -> Self {
        Error::InvalidEnvironment(msg.into())
    }
}
