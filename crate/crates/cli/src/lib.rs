//! Scenario files in, reports and plot data out.

pub mod config;
pub mod scenario;

pub use config::{parse_config, Command, ConfigError, Parameters, ScenarioConfig};
pub use scenario::{build_report, det_csv, run_scenario, Report, RunError, EXIT_ERROR, EXIT_OK, EXIT_VIOLATION};
