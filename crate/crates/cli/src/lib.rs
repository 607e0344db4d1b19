//! Command-line shell around `facetviz`: layered run configs, one run
//! directory per invocation with a hashed manifest, replay, and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod settings;

pub use commands::{execute, replay, run, schedule_echo, Command, ReplayReport, RunOptions, RunOutcome};
pub use config::RunConfig;
pub use error::{Category, CliError, CliResult};
pub use manifest::RunManifest;
pub use plot::{emit_montage, emit_scatter_svg};
