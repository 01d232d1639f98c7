//! Configuration, file formats and subcommands of the `segsolve` tool.

pub mod config;
pub mod error;
pub mod fields;
pub mod render;
pub mod run;

pub use config::{config_digest, emit_canonical, parse_config, RunConfig};
pub use error::CliError;
pub use fields::{read_fields, write_fields};
pub use render::{render_image, render_partition, Image};
pub use run::{load_config, run, Command, Outcome, Overrides, RunManifest};
