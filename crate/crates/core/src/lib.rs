//! Single-process simulator for cross-silo federated learning with a
//! personalized subnetwork warmup.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense ReLU network on a flat parameter vector with activation
//!   masking and exact backpropagation (weights and mask multipliers).
//! - [`masking`]: score → probability → Bernoulli mask → parameter mask
//!   pipeline, diversity penalty, straight-through score update and fixed
//!   partitions.
//! - [`data`]: the interleaved-cluster synthetic dataset, class and Dirichlet
//!   partitions, mini-batch streams and the binary dataset file.
//! - [`federation`]: FedAvg, FedProx and the two warmup variants as a round
//!   state machine with masked aggregation.
//! - [`metrics`]: per-round records, rounds-to-target and seed summaries.
//! - [`cli`]: config files, CSV/summary/SVG output and the `fedpews` binary.
//!
//! All randomness is drawn from streams keyed by experiment seed and
//! (purpose, participant, round, step), see [`rng`].

pub mod cli;
pub mod data;
pub mod error;
pub mod federation;
pub mod masking;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
