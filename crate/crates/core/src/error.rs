use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown scheme `{0}` (known: AB1, AB2, AB3, BDF1, BDF2, BDF3, AM1, AM2)")]
    Catalog(String),

    #[error("cannot normalize scheme `{0}`: coefficient sum of betas is zero")]
    Normalization(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vector field is singular at the requested point: {0}")]
    Singularity(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("derivative order {0} is not supported (maximum is 2)")]
    UnsupportedOrder(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by malformed or missing user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Catalog(_)
                | Error::Normalization(_)
                | Error::Contract(_)
                | Error::UnsupportedOrder(_)
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::Parse(_)
        )
    }
}
