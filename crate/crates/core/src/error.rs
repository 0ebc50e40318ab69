use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or extents that do not fit together (non-power-of-two sides,
    /// channel mismatches, unequal lengths).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition on values rather than shapes was violated.
    #[error("contract violated: {0}")]
    Contract(String),

    /// A metric whose denominator vanished.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Malformed binary or structured input. `offset` is the byte offset of
    /// the offending field where one exists.
    #[error("parse error at offset {offset} ({field}): {reason}")]
    Parse {
        offset: usize,
        field: &'static str,
        reason: String,
    },

    #[error("unsupported {what}: {detail}")]
    Unsupported { what: &'static str, detail: String },

    /// Training produced a NaN or infinity; names the first offending term.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(offset: usize, field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
