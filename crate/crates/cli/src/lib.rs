//! Command-line front end: configuration, subcommands and sweeps.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod sweep;
