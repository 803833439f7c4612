use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model description at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("knob space size overflows 64 bits")]
    SpaceOverflow,
    #[error("knob space of {size} candidates is too large to enumerate (limit {limit})")]
    SpaceTooLarge { size: u64, limit: u64 },
    #[error("unknown subgraph id {0}")]
    UnknownSubgraph(usize),
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("accuracy undefined: {0}")]
    Undefined(String),
    #[error("empty selection scope")]
    EmptyScope,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
