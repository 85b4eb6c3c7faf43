use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate landmark at sensor origin")]
    DegenerateLandmark,

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss term at index {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("no loop-closure opportunities")]
    NoOverlap,

    #[error("pose graph is disconnected: vertex {0} is unreachable from the anchor")]
    Disconnected(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Whether the root cause is numerical (as opposed to configuration or IO).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_numerical(),
            Error::DegenerateLandmark
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::Diverged { .. }
            | Error::Singular(_) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
