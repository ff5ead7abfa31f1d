//! Error taxonomy shared by every module.
//!
//! The variants map one-to-one onto process exit codes in the CLI:
//! configuration and contract problems are the caller's fault (exit 1),
//! budget refusals mean the request is too large for exact evaluation
//! (exit 2), and numerical-integrity failures mean the library caught
//! itself producing an impossible value (exit 3).

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration, file, or argument.
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The input is structurally valid but degenerate (e.g. an empty
    /// subset where a nonempty one is required).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The request exceeds the configured exact-evaluation budget.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// An internal invariant on computed values failed; this indicates a
    /// bug or catastrophic rounding, never bad user input.
    #[error("numerical integrity failure: {0}")]
    NumericalIntegrity(String),

    /// I/O failure while reading or writing tables and reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Degenerate(_) | Error::Io(_) => 1,
            Error::Budget(_) => 2,
            Error::NumericalIntegrity(_) => 3,
        }
    }
}
