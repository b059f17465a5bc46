//! Config-driven experiment runner for one-shot federated k-means: instance
//! generation, runs over many seeds, separation profiles and late joins.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod state;

pub use config::{Experiment, RunConfig};
pub use error::{CliError, CliResult};
