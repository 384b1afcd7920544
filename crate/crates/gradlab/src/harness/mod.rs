//! Experiment orchestration and the command-line interface.

mod cli;

pub use cli::cli;
