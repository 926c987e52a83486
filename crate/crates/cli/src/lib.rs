//! Command-line front end: run configuration, the `stats`, `simulate`,
//! `garch-fit`, `run` and `backtest` commands, and synthetic market data.

pub mod commands;
pub mod config;
pub mod error;
pub mod synthetic;

pub use config::RunConfig;
pub use error::CliError;
