//! Experiment files, dispatch and run manifests behind the `lab` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;

pub use config::{ExperimentConfig, Kind};
pub use error::LabError;
pub use experiments::{execute, Outcome, Verdict};
pub use manifest::{reproduce, run, OutputDir, RunManifest};
