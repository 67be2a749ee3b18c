//! Library behind the `oled` binary: experiment configs, dataset
//! generation and manifests, and the subcommands as plain functions.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod manifest;
pub mod scene;

pub use error::{CliError, Result};
