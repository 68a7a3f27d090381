use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter combination that can never be valid.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an API precondition (lengths, ranks, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Scenario file validation failure, with the offending key path.
    #[error("validation error at `{key}`: {msg}")]
    Validation { key: String, msg: String },
    /// A frame aborted inside the engine; names link and stage.
    #[error("frame error on link `{link}` in stage `{stage}`: {source}")]
    Frame {
        link: String,
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn validation(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Wraps an error with the link/stage coordinates where it occurred.
    pub fn in_frame(self, link: impl Into<String>, stage: impl Into<String>) -> Self {
        Error::Frame {
            link: link.into(),
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
