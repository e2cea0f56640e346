//! Data ingestion, configuration and reporting around `pbcore`.

pub mod commands;
pub mod config;
pub mod io;
pub mod report;

pub use commands::{run_command, Command, Invocation, SolveMethod};
pub use config::{ElectionConfig, Money};
