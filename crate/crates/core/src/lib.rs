//! Deterministic single-process federated learning simulator.
//!
//! The crate simulates the full federated round loop on synthetic data:
//! clients train locally with minibatch SGD (optional momentum and proximal
//! regularization), the server recovers per-client update directions,
//! measures pairwise gradient conflicts, optionally harmonizes conflicting
//! gradients by projection before aggregation, and aggregates with FedAvg or
//! FedNova. Every random decision draws from a named, seed-derived stream,
//! so a config file plus its seeds reproduces every artifact byte for byte.

pub mod config;
pub mod datagen;
pub mod error;
pub mod harmonizer;
pub mod metrics;
pub mod models;
pub mod paramvec;
pub mod rng;
pub mod runner;
pub mod server;
pub mod trainer;

pub use error::{Error, Result};
pub use paramvec::ParamVector;
