//! Heterogeneous best-response learning dynamics for two-agent zero-sum
//! matrix and stochastic games, with exact equilibrium oracles and
//! Lyapunov-style diagnostics.

pub mod cli;
pub mod diagnostics;
pub mod equilibrium_oracle;
pub mod error;
pub mod game_model;
pub mod matrix_learners;
pub mod response_kernel;
pub mod rng;
pub mod sg_learners;
pub mod sim_harness;

pub use error::{Error, Result};
