use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {numel} elements")]
    NotScalar { numel: usize },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("next-token mask selects no targets (N = 0)")]
    DegenerateMask,
    #[error("reserved token {token} found inside {field}")]
    ReservedTokenInPayload { token: u32, field: &'static str },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("derangement needs at least 2 elements, got {0}")]
    TooSmallForDerangement(usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("step {step} outside schedule [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("invalid configuration: {key}: {reason}")]
    Config { key: &'static str, reason: String },
    #[error("prefix of length {len} leaves no room below max_len {max_len}")]
    PrefixTooLong { len: usize, max_len: usize },
    #[error("invalid example: {0}")]
    InvalidExample(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
