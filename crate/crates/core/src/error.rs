use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-range input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent configuration or missing prerequisites for an operation.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} has no samples in the training portion")]
    EmptyClass { class: usize },

    #[error("class {class} has only {count} sample(s), cannot split")]
    Split { class: usize, count: usize },

    #[error("class {class} has {available} samples, {requested} requested (short by {})", requested - available)]
    Insufficient {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
