//! Command-line frontend for the `divc` codec: volume synthesis, training,
//! compression, meshing, texture atlases and rate-distortion sweeps.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod sweep;

pub use config::Settings;
pub use error::{CliError, Result};
