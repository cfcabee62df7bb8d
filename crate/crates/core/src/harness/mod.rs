//! File-driven experiment execution: configs in, run directories with
//! manifests, metrics and checkpoints out, plus cross-run reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod synthetic;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiment::{
    build_plan, export_partition, load_fold, rerun_from_manifest, run_config, run_dir_for,
    run_experiment, run_single, RunManifest, RunStatus,
};
pub use report::{report, ReportOutput};
pub use synthetic::{make_synthetic_dataset, make_synthetic_intent_dataset, SynthSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 1 config, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
