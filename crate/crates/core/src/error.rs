use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for size {bound} at position {position}")]
    Index {
        index: usize,
        bound: usize,
        position: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("loss mask selects no positions")]
    EmptyLoss,
    #[error("no candidate positions for masking")]
    EmptyCandidates,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochRange { epoch: usize, total: usize },
    #[error("non-finite gradient in parameter {param}; optimizer step rejected")]
    PoisonedGradient { param: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error("invalid UTF-8 at byte offset {offset}")]
    Encoding { offset: usize },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
