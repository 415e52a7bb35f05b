use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input shapes or arguments violate an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// An index (embedding row, target class, token id) is out of range.
    #[error("index {index} out of range for bound {bound} ({what})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// A primitive produced NaN or Inf.
    #[error("non-finite value produced by {0}")]
    NumericOverflow(&'static str),
    /// A reward schedule or run configuration is incomplete.
    #[error("configuration error: {0}")]
    Config(String),
    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(alloc::format!($($arg)*))
    };
}
pub(crate) use contract;
