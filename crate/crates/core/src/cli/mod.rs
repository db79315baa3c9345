//! Command-line front end: flat key=value config files, command dispatch,
//! and deterministic CSV artifacts with a JSON manifest.

mod config;
mod dispatch;

pub use config::{parse_config, ConfigError, ResolvedConfig};
pub use dispatch::{dispatch, exit_code, Command, RunManifest};
