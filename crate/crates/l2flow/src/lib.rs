//! File formats, scenario runner, sweeps and verification suites for the
//! `l2flow` command-line tool. The numerics live in `l2flow-core`.

pub mod config;
pub mod plot;
pub mod runner;
pub mod scenario;
pub mod snapshot;
pub mod sweep;
pub mod verify;

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig};
pub use runner::{run_scenario, ExitStatus, RunSummary};
