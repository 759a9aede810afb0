use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the tracker pipeline.
#[derive(Debug, Error)]
pub enum DstError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },

    #[error("empty schema")]
    EmptySchema,

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("dialogue {dialogue}: {message}")]
    InvalidDialogue { dialogue: String, message: String },

    #[error("empty context")]
    EmptyContext,

    #[error("empty token list")]
    EmptyTokens,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("slot {slot}: {message}")]
    SlotKind { slot: String, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("non-finite {what}: {detail}")]
    NonFinite { what: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

pub type Result<T> = std::result::Result<T, DstError>;

impl DstError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DstError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, message: impl ToString) -> Self {
        DstError::Malformed {
            what: what.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn dialogue(dialogue: impl Into<String>, message: impl Into<String>) -> Self {
        DstError::InvalidDialogue {
            dialogue: dialogue.into(),
            message: message.into(),
        }
    }
}
