//! Command implementations behind the `depthgaze` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod npy;
pub mod overlay;

pub use config::{config_from_value, load_config, ConfigErrors, RunConfig};
pub use manifest::RunManifest;
