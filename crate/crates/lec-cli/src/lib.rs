//! Experiment harness: config parsing, run orchestration, CSV output.
//!
//! The binary front-end (`lec`) drives [`run_experiment`] and [`sweep`];
//! both are exposed here so integration tests can run experiments without
//! spawning processes.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use runner::{run_experiment, sweep, SweepParam};
