//! Single-stream policy optimization on synthetic verifiable-reward bandits.
//!
//! Modules:
//! - [`tracker`]: per-prompt Beta value tracker with KL-adaptive forgetting.
//! - [`advantage`]: raw, globally normalized, GRPO and RLOO advantages.
//! - [`sampler`]: prioritized prompt sampling.
//! - [`optimizer`]: PPO-Clip surrogate and minibatch updates on tabular logits.
//! - [`envbed`]: tabular softmax policies and Bernoulli reward environments.
//! - [`trainloop`]: SPO, GRPO/RLOO and repeated-stream training loops.
//! - [`schedsim`]: group vs group-free batch assembly under latency models.
//! - [`analysis`]: closed-form cost/variance formulas and Monte Carlo checks.
//!
//! Every random draw comes from [`rng::stream`], keyed by a master seed, a
//! purpose and an index, so runs are reproducible bit for bit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod analysis;
pub mod config;
pub mod envbed;
pub mod error;
pub mod manifest;
pub mod optimizer;
pub mod rng;
pub mod sampler;
pub mod schedsim;
pub mod tracker;
pub mod trainloop;

pub use error::{Error, Result};
