//! Command-line driver: run manifests, the end-to-end pipeline and the
//! `analyze` / `select` / `run` / `eval` / `report` subcommands.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, ExitKind};
pub use manifest::{Overrides, RunManifest};
