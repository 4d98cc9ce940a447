use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("token id {id} out of range for a vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("byte {0:#04x} is not in the vocabulary")]
    UnknownByte(u8),

    #[error("{len} tokens exceed the model context of {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("span [{start}, {start}+{len}) does not fit a sequence of length {seq_len}")]
    SpanOutOfRange {
        start: usize,
        len: usize,
        seq_len: usize,
    },

    #[error("trace length mismatch: {0} vs {1}")]
    TraceMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in example {index}")]
    NonFinite { index: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("example {index}: {inner}")]
    InExample { index: usize, inner: Box<Error> },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn in_example(index: usize, inner: Error) -> Self {
        Error::InExample {
            index,
            inner: Box::new(inner),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
