//! Experiment orchestration for `opdyn`: configuration, studies and file output.

pub mod config;
pub mod error;
pub mod output;
pub mod studies;
pub mod svg;

pub use config::{load, ExperimentConfig, Formats, Mode, RawConfig};
pub use error::{CliError, CliResult};
pub use output::RunManifest;
pub use studies::run;
