//! Command-line plumbing for the trading game library: scenario files,
//! subcommands and the verify suites.

pub mod commands;
pub mod config;
pub mod verify;

pub use commands::{Context, Failure, EXIT_CHECK, EXIT_CONDITIONS, EXIT_CONFIG, EXIT_INTERNAL};
pub use config::{ConfigError, KappaSpec, ScenarioConfig};
