//! File formats, parallel orchestration and the command line for
//! [`stcp_core`].
//!
//! The `stcp` binary reads a JSON experiment configuration, runs the repeats
//! on a rayon pool and writes tidy CSV/JSON outputs. Output bytes depend only
//! on the configuration and seed, never on the thread count.

pub mod cli;
pub mod config;
pub mod error;
pub mod models;
pub mod output;
pub mod run;

pub use error::CliError;
