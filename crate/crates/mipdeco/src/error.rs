//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. The [`Error::category`] string
//! is stable and machine-readable; the CLI prints it and maps it to an exit
//! code so scripted callers can distinguish configuration mistakes from
//! numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh step: {0}")]
    InvalidMesh(String),

    #[error("observation box invalid: {0}")]
    InvalidObsBox(String),

    #[error("source layout invalid: {0}")]
    InvalidSourceLayout(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("Lyapunov solve failed: {0}")]
    Lyapunov(String),

    #[error("model reduction failed: {0}")]
    Reduction(String),

    #[error("Krylov solver failed: {0}")]
    Krylov(String),

    #[error("interior-point solve failed: {0}")]
    InteriorPoint(String),

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("persisted model bundle invalid: {0}")]
    Persistence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable category tag used by the CLI for exit codes and stderr output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_)
            | Error::InvalidObsBox(_)
            | Error::InvalidSourceLayout(_)
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch(_) => "argument",
            Error::Factorization(_)
            | Error::Lyapunov(_)
            | Error::Reduction(_)
            | Error::Krylov(_)
            | Error::InteriorPoint(_) => "numerics",
            Error::InstanceTooLarge(_) => "instance",
            Error::Config(_) => "config",
            Error::Persistence(_) | Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
