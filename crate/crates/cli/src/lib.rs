//! Experiment harness for the `sdemap` estimators: simulation, estimation,
//! Monte Carlo batches and mesh-refinement studies driven by TOML configs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{Context, Options};
pub use config::ExperimentConfig;
pub use error::CliError;
