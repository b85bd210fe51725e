use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Input errors (exit code 2).
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no users remain after {k}-core filtering")]
    EmptyAfterFiltering { k: usize },
    #[error("user {user} has {len} interactions; leave-one-out needs at least 3")]
    HistoryTooShort { user: String, len: usize },
    #[error("template bank is empty")]
    EmptyTemplateBank,
    #[error("template {template} requires a user id but none was given")]
    MissingUserId { template: u32 },
    #[error("prompt needs at least one history item")]
    EmptyHistory,

    // State / compatibility errors (exit code 3).
    #[error("vocabulary mismatch: expected {expected}, found {found}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("id registry was produced by generator {registry}, bundle generator is {bundle}")]
    StaleRegistry { registry: String, bundle: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("target item {item} has no registered id")]
    TargetMissing { item: String },
    #[error("id `{0}` is not registered")]
    UnknownId(String),

    // Internal invariant violations (exit code 4).
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidTokenId { id: u32, size: usize },
    #[error("sequence of length {len} exceeds limit {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no unique id could be generated for item {item}")]
    IdSpaceExhausted { item: String },
    #[error("constrained decoding reached a prefix with no valid continuation")]
    DeadEnd,
    #[error("duplicate id `{0}` in registry")]
    DuplicateId(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Io { .. }
            | Parse { .. }
            | InvalidInput(_)
            | EmptyAfterFiltering { .. }
            | HistoryTooShort { .. }
            | EmptyTemplateBank
            | MissingUserId { .. }
            | EmptyHistory => 2,
            VocabularyMismatch { .. }
            | StaleRegistry { .. }
            | Checkpoint(_)
            | TargetMissing { .. }
            | UnknownId(_) => 3,
            InvalidTokenId { .. }
            | SequenceTooLong { .. }
            | ShapeMismatch(_)
            | IdSpaceExhausted { .. }
            | DeadEnd
            | DuplicateId(_) => 4,
        }
    }
}
