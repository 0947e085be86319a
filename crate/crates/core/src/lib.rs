//! SLO-aware container scheduling for serverless edge computing.
//!
//! The crate is organized bottom-up:
//!
//! - [`scenario`]: topology, function catalog, workloads and their file formats
//! - [`latency`]: cold-start, computation and communication latency
//! - [`simenv`]: discrete-event cluster simulator with an RL interface
//! - [`neural`]: small dense networks with manual backpropagation and Adam
//! - [`agents`]: PPO actor-critic, multi-step DQN and heuristic schedulers
//! - [`solver`]: exhaustive oracle and oracle-penalty evolutionary solver
//! - [`metrics`]: percentiles, CDFs, SLO-violation rates and comparisons

pub mod agents;
pub mod error;
pub mod latency;
pub mod metrics;
pub mod neural;
pub mod scenario;
pub mod simenv;
pub mod solver;

pub use error::{Error, Result};
