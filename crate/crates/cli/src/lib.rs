//! Command-line layer: run configuration, CSV artifacts, model persistence,
//! and the subcommand implementations behind the `fosr` binary.

pub mod commands;
pub mod config;
pub mod model_io;
pub mod tables;
