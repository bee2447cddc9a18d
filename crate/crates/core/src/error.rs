use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is numerically rank deficient ({context})")]
    RankDeficient { context: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem dimensions: {0}")]
    Dimension(String),

    #[error("matrix contains non-finite entries ({0})")]
    NonFinite(String),

    #[error("columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("iteration diverged at round {round}: {reason}")]
    Diverged { round: usize, reason: String },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn rank_deficient(context: impl Into<String>) -> Self {
        Error::RankDeficient {
            context: context.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
