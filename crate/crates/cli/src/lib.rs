//! Experiment harness for the `splitedge` simulator: TOML run configs,
//! training runs with per-round CSV traces, planners, latency sweeps and SVG
//! charts.

pub mod config;
pub mod error;
pub mod latency;
pub mod plan;
pub mod plot;
pub mod runner;
pub mod sweep;

pub use config::{LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use runner::{train, Overrides, TrainOutput};
