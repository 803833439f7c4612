//! Command-line driver for famtune: configuration resolution, run manifests
//! and the experiment subcommands.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{execute, replay, Command, Outcome};
pub use config::{parse_config, Flags, RunConfig};
pub use manifest::{emit_manifest, read_manifest, Manifest};
