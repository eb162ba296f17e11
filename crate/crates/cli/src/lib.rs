//! Experiment runner behind the `iad` binary.

pub mod commands;
pub mod config;
pub mod experiment;
