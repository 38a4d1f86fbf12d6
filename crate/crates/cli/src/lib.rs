//! Experiment harness: TOML configs, the `pretrain`, `finetune`, `verify` and
//! `bounds` commands, CSV outputs with cross-seed summaries, and run
//! manifests.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod summary;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
