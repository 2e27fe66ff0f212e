//! Config-driven runner for the srvrc solvers: `run`, `check` and `compare`
//! over JSON experiment configs.

pub mod commands;
pub mod config;

pub use commands::{check_problem, cmd_check, cmd_compare, cmd_run, CheckReport, RunSummary};
pub use config::{ExperimentConfig, LoadedConfig, ProblemSpec};
