//! Command-line pipeline for the typo-robustness retrieval laboratory.
//!
//! The binary exposes one subcommand per pipeline stage plus `experiment`,
//! which runs them all in order. Every stage writes its artifacts and a
//! manifest (parameters plus content hashes of inputs and outputs) into a
//! dedicated directory under the configured output root, skips itself when
//! the manifest proves nothing changed, and refuses to consume artifacts
//! that no longer match the manifest of the stage that produced them.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::{ExperimentConfig, Overrides, ResolvedConfig};
pub use error::CliError;
pub use stages::{Pipeline, StageStatus};
