//! Meta-Thompson sampling for adaptive radar waveform selection.
//!
//! A radar picks one waveform per coherent processing interval (CPI) and is
//! scored by how close the post-processing SINR gets to a target. Within a
//! track a Thompson-sampling agent learns a linear reward model over
//! loss-statistics contexts; across tracks a Gaussian meta-posterior learns
//! the prior that the next track's agent should start from.
//!
//! Modules, bottom up:
//! - [`gaussmath`]: Cholesky, sampling, conjugate updates, Gaussian KL.
//! - [`waveforms`]: catalog envelopes and the matched filter.
//! - [`fstc`]: finite-state target channel and SINR measurement.
//! - [`bandit`]: per-track Thompson-sampling agent.
//! - [`meta`]: meta-posterior and the multi-track experiment loop.
//! - [`metrics`]: regret, outage, KL trace, PAC-Bayes bounds.
//! - [`harness`]: configuration, CSV output and aggregation.

pub mod bandit;
pub mod error;
pub mod fstc;
pub mod gaussmath;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod rng;
pub mod selftest;
pub mod waveforms;

pub use error::{Error, Result};
