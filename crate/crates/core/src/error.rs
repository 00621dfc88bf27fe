use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected 7 worker votes, got {0}")]
    InvalidVoteCount(usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),

    #[error("utterance `{0}` has empty text")]
    EmptyUtterance(String),

    #[error("utterance `{0}` carries no vote data")]
    MissingVotes(String),

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid feature value: {0}")]
    InvalidFeature(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("corpus of {size} utterances is too small for {k}-fold splitting (need at least {needed})")]
    TooSmall { size: usize, k: usize, needed: usize },

    #[error("fold {fold}, method {method}: {source}")]
    InFold {
        fold: usize,
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True if the root cause is numeric divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence(_) => true,
            Error::InFold { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub(crate) fn in_fold(self, fold: usize, method: &str) -> Self {
        Error::InFold {
            fold,
            method: method.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
