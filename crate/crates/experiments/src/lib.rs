//! Scenario configuration, sweep execution and result files for the
//! `gm-design` command line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod scenario;
pub mod svg;

pub use config::{builtin, parse_config, Scenario, ScenarioConfig, ScenarioId};
pub use error::{ExperimentError, Result};
pub use output::OutputWriter;
pub use scenario::{run_scenario, run_scenario_with, snr_to_scale, RunOptions, SweepResult};
