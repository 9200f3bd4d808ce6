//! Experiment engine, dataset loaders, output files and the command-line
//! interface around `alpool-core`.

pub mod cli;
pub mod config;
pub mod engine;
pub mod loaders;
pub mod output;
