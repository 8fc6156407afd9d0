//! Simulator for federated LoRA fine-tuning with heterogeneous client ranks.
//!
//! Clients train only `B` and a per-dimension gate `λ` on a shared, frozen
//! `A`, prune weak dimensions locally, and upload `B·diag(λ)`. The server
//! zero-pads uploads to a common rank, averages them with rank-aware
//! weights and refines `A` on a small public split.
//!
//! The backbone is a linear softmax classifier on synthetic Gaussian blobs,
//! small enough that every step can be checked against an exact oracle.

pub mod adapter;
pub mod baselines;
pub mod client;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod server;

pub use adapter::{DecoupledAdapter, LoraHyper, Mask};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentReport, Method, RoundMetrics};
pub use linalg::Matrix;
pub use rng::Seed;
