//! Pipeline, file formats and acceptance table behind the `cyclicity` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod figures;
pub mod pipeline;
pub mod verify;

pub use config::{LoadedConfig, RunConfig};
pub use error::CliError;
pub use pipeline::{run_pipeline, RunManifest};
pub use verify::{verify_dir, VerifyTable};
