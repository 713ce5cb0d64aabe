//! Offline reinforcement learning for planning transitions over a small
//! ordered set of interaction stages.
//!
//! The planner state is a sliding window of reply embeddings plus the
//! previous stage; actions are restricted to adjacent stages; rewards blend
//! reply sentiment with progress toward the final stage. Behavior cloning,
//! conservative Q-learning and implicit Q-learning with an advantage-weighted
//! actor are trained offline and evaluated in closed loop against a synthetic
//! latent-trust environment.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod learners;
pub mod mdp;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod simulator;

pub use error::{Error, Result};
