//! Configuration, data generation and the commands behind the `plapsys` binary.

pub mod commands;
pub mod config;
pub mod data;
