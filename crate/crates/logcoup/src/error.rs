//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed argument to an in-process operation (dimension mismatch,
    /// non-finite input, empty sample list).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration value (out-of-range hyperparameter, unknown
    /// field, unknown activation kind).
    #[error("config error: {0}")]
    Config(String),

    /// Dataset could not be read or violates a load-time invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A Markov chain failed: divergence, zero acceptance, or a propagated
    /// inner-chain failure.
    #[error("sampler error: {0}")]
    Sampler(String),

    /// The request exceeds what the oracle machinery can do (dimension too
    /// high, rejection envelope too loose).
    #[error("capability error: {0}")]
    Capability(String),

    /// An operation was called on an object in the wrong state
    /// (e.g. prediction from an incomplete sample store).
    #[error("state error: {0}")]
    State(String),

    /// A matrix construction is rank-deficient where the analysis assumes
    /// full rank.
    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI taxonomy: 1 config, 2 data, 3 sampler.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Sampler(_) => 3,
            Error::Capability(_) | Error::State(_) | Error::Degenerate(_) => 1,
        }
    }
}
