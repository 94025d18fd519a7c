use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("annotation xml error in <{element}>: {message}")]
    Xml { element: String, message: String },

    #[error("synthetic slide generation failed: {0}")]
    Generation(String),

    #[error("detector `{detector}` failed: {message}")]
    Detector { detector: String, message: String },

    #[error("queue is full (capacity {capacity})")]
    Backpressure { capacity: usize },

    #[error("queue is closed")]
    QueueClosed,

    #[error("result store busy after {attempts} lock attempts: {path}")]
    StoreBusy { path: PathBuf, attempts: u32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Image {
        context: String,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn xml(element: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Xml {
            element: element.into(),
            message: message.into(),
        }
    }
}

/// Attach a human-readable context to fallible IO-ish results.
pub(crate) trait Context<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, std::io::Error> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: ctx(),
            source,
        })
    }
}

impl<T> Context<T> for std::result::Result<T, image::ImageError> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Image {
            context: ctx(),
            source,
        })
    }
}

impl<T> Context<T> for std::result::Result<T, serde_json::Error> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Json {
            context: ctx(),
            source,
        })
    }
}
