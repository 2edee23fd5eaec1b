use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("filter design error: {0}")]
    Design(String),

    #[error("signal too short: {len} samples, need more than {required}")]
    TooShort { len: usize, required: usize },

    #[error("batch norm running statistics were never accumulated")]
    MissingStats,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("letter '{letter}' has no segment for subject {subject}")]
    MissingLetter { letter: char, subject: u32 },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("augmentation invoked in evaluation mode")]
    EvalAugmentation,

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Param(_))
    }
}
