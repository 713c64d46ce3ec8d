//! Experiment orchestration: simulation-file parsing, cross-product case
//! enumeration, cached execution of the train/predict/evaluate pipeline,
//! fine-tuning workflows, and report emission.

pub mod cache;
pub mod cases;
pub mod exec;
pub mod plan;
pub mod report;
pub mod store;

pub use cache::Cache;
pub use cases::{enumerate_cases, CaseStatus, ExperimentCase, SourceLabel};
pub use exec::{run_attack_pass, run_plan, RunSummary};
pub use plan::{parse_simulation_file, ExperimentPlan};
pub use report::emit_report;
pub use store::{read_store, ResultRecord, ResultStore, Status};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error("empty result store")]
    EmptyStore,
    #[error(transparent)]
    Scene(#[from] step_core::scene::SceneError),
    #[error(transparent)]
    Ingest(#[from] step_core::ingest::IngestError),
    #[error(transparent)]
    Sample(#[from] step_core::sample::SampleError),
    #[error(transparent)]
    Split(#[from] step_core::split::SplitError),
    #[error(transparent)]
    Model(#[from] step_core::model::ModelError),
    #[error(transparent)]
    Metrics(#[from] step_core::metrics::MetricsError),
    #[error(transparent)]
    Perturb(#[from] step_core::perturb::PerturbError),
}

impl RunnerError {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config { path: path.into(), reason: reason.into() }
    }
}

pub(crate) fn io_err(e: std::io::Error, what: &std::path::Path) -> RunnerError {
    RunnerError::Io(format!("{}: {e}", what.display()))
}
