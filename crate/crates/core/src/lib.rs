//! Training pipeline for a planar two-link balance-tracking controller.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`], [`mlp`], [`rng`], [`gradcheck`] — dense matrices, feed-forward
//!   networks with analytic gradients, and a seedable counter PRNG. Everything
//!   is `f64`; the goal is verifiability, not throughput.
//! - [`policy`] — mixture-of-experts actor/critic, the Gaussian action head,
//!   residual policy composition, and the orthogonality/KL regularizers with
//!   their closed-form bounds.
//! - [`model`], [`motion`], [`env`], [`reward`] — the planar balancer model,
//!   reference-motion generation and curation, simulation, and the shaped
//!   tracking reward with the balance-aware adaptive weight.
//! - [`trainer`], [`evalkit`] — PPO with GAE, adaptive sampling, residual
//!   adaptation, checkpointing, and the metrics/verification harness.

pub mod env;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod model;
pub mod motion;
pub mod obsnorm;
pub mod parallel;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
