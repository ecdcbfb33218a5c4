use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token id {token} is out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("{0} sequence is empty")]
    EmptySequence(&'static str),

    #[error("chosen and rejected responses are identical")]
    TiedPair,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("log-probability {value} at position {position} is positive")]
    PositiveLogProb { position: usize, value: f64 },

    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("non-finite loss at step {step} (pairs {pair_ids:?})")]
    NonFiniteLoss { step: u64, pair_ids: Vec<u64> },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
