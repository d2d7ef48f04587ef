//! Experiment runner behind the `dilseg` command.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod figures;

pub use error::{CliError, Result};
