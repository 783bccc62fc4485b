//! Configuration parsing and command implementations behind the `steerdiff`
//! binary. Kept as a library so integration tests can drive runs through
//! the same code paths as the CLI.

pub mod commands;
pub mod config;
