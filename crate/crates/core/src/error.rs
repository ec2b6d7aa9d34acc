use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error("HTTP request to {url} failed: {message}")]
    Http { url: String, message: String },

    #[error("tokenizer plugin failed: {message}; stderr: {stderr}")]
    Tokenizer { message: String, stderr: String },

    #[error("could not parse LLM response {raw:?}")]
    UnparsableResponse { raw: String },

    #[error("no non-empty documents to model")]
    NoDocuments,

    #[error("prediction and gold id sets differ: {0}")]
    IdMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
