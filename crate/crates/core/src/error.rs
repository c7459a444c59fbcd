use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, names).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("batch norm `{0}` evaluated before any training step populated its running statistics")]
    UninitializedStats(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("audio too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io {
                path: PathBuf::new(),
                source: io,
            },
            other => Error::Format(other.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
