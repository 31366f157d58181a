//! Radar/communication mode selection for an autonomous vehicle.
//!
//! Each step the vehicle either transmits queued data or runs its radar.
//! [`env`] simulates the road factors, events, channel and queue;
//! [`agents`] holds the policies (round-robin, tabular Q-learning and the
//! [`dqn`]); [`harness`] trains, evaluates and sweeps them.

pub mod agents;
pub mod cli;
pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod report;
pub mod rng;
pub mod selftest;

pub use config::{parse_config, parse_config_str, ExperimentConfig, SweepSpec};
pub use error::{Error, Result};
