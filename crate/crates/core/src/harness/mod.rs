//! Configuration, replicated runs with CSV and manifest output, and the
//! verification battery.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{Algo, ExperimentConfig, FullMeasTarget};
pub use run::{run_experiment, write_outputs, Engine, RunManifest, RunOutcome};
pub use verify::{verify_suite, VerifyOptions, VerifyReport};
