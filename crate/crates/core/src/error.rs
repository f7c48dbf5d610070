//! Error types shared across the simulator.
//!
//! Contract violations (mismatched vector lengths, invalid constructor
//! arguments, calling a classifier-only operation on a regression model)
//! panic. Runtime failures that a caller can meaningfully react to are
//! reported through [`Error`].

use std::path::PathBuf;

use thiserror::Error;

/// Failures that can occur while configuring or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    /// The experiment configuration is malformed or inconsistent.
    ///
    /// `field` is a dotted path into the document (for example
    /// `partition.alpha`) so the offending key can be located without
    /// re-reading the whole file.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// A non-IID partition kept producing empty clients after the bounded
    /// number of re-draws.
    #[error(
        "partitioning failed: could not assign at least one sample to each of \
         {clients} clients after {attempts} attempts (alpha = {alpha}); use more \
         samples, fewer clients, or a larger alpha"
    )]
    PartitionExhausted {
        clients: usize,
        attempts: usize,
        alpha: f64,
    },

    /// Local training produced a non-finite loss or non-finite parameters.
    #[error("client {client_id} diverged at local step {step}: {quantity} became non-finite")]
    Divergence {
        client_id: usize,
        step: usize,
        quantity: &'static str,
    },

    /// Adds the federated round index to an error raised inside that round.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// Filesystem failure while writing run artifacts.
    #[error("{action} `{path}`: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Convenience constructor for configuration errors.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Wraps `self` with the round in which it occurred.
    pub fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
