use alloc::string::String;

/// Errors produced by the core model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown label `{name}` on line {line}")]
    UnknownLabel { name: String, line: usize },
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at sentence {sentence}")]
    NonFinite { sentence: usize },
    #[error("numerical overflow: non-finite value in the chain recursions")]
    Overflow,
    #[error("correlation is undefined for a constant input")]
    UndefinedCorrelation,
    #[error("gold labels are required for sentence {0}")]
    MissingGold(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
