//! Experiment runner for `ellpos-core`.
//!
//! An [`ExperimentManifest`] names an experiment, a body and its parameters.
//! Running it yields CSV rows and a JSON summary; every CSV starts with a
//! comment line carrying the version and the manifest, so any output can be
//! replayed. `check` runs the acceptance suite in [`checks`].

pub mod checks;
pub mod experiments;
pub mod manifest;

pub use checks::{run_all_checks, Budgets, CheckReport};
pub use experiments::{run, Output};
pub use manifest::{CliError, Experiment, ExperimentManifest};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
