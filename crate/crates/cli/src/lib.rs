//! Experiment runner: config parsing, preset experiments, CSV/JSON artifact
//! export, and run manifests for the misdirection-control library.

pub mod config;
pub mod export;
pub mod presets;
pub mod runner;
