//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Shape/dimension disagreement between tensors; names both shapes.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid layer/network/experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Index out of range (embedding lookups, axis selection).
    #[error("bounds error: {0}")]
    Bounds(String),

    /// File-level failure; always carries the offending path.
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    /// Checkpoint or embedding container could not be decoded.
    #[error("load error: {0}")]
    Load(String),

    /// A numeric routine produced non-finite or impossible values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training aborted; carries the step at which the loss went bad.
    #[error("training error at step {step}: {message}")]
    Training { step: u64, message: String },

    /// Dataset-level failure (missing pairs, empty set, bad manifest).
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dim {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Io { .. } | Error::Data(_) | Error::Load(_) => 3,
            Error::Dim { .. } | Error::Bounds(_) | Error::Numeric(_) | Error::Training { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
