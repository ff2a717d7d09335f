use std::path::PathBuf;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("page {page_no}: {message}")]
    Layout { page_no: u32, message: String },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("index file {file}: {message}")]
    Index { file: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing: {0}")]
    MissingArgument(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("backend: {0}")]
    Backend(#[from] BackendError),

    #[error("scoring document {doc_id}: {source}")]
    Scorer {
        doc_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn index(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Index {
            file: file.into(),
            message: message.into(),
        }
    }
}
