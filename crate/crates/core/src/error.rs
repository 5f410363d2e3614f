use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("degenerate distribution: softmax row {row} is fully masked")]
    DegenerateDistribution { row: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    Vocab { token: usize, vocab: usize },
    #[error("non-finite loss while perturbing parameter `{param}`")]
    GradCheckNonFinite { param: String },
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("schema mismatch at tensor `{name}`: {detail}")]
    Schema { name: String, detail: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
