//! Experiment orchestration: configs, runs, reports and artifacts.

mod artifacts;
mod config;
mod experiment;

pub use artifacts::{
    read_manifest, sha256_hex, strip_timing, verify_manifest, ArtifactWriter, Csv, Manifest, ManifestEntry, RunArtifactSet,
    RunStatus, MANIFEST_FILE, SCHEMA_VERSION,
};
pub use config::{
    BaselineToggles, DatasetConfig, ExperimentConfig, MetricToggles, ModelConfig, StageSeeds, SweepAxis, SweepConfig,
    TrainingConfig, OUT_DIR_ENV, WORKERS_ENV,
};
pub use experiment::{
    read_experiment_report, read_sequential_report, read_sweep_report, run_baselines, run_experiment, run_sequential, run_sweep, run_train,
    worker_pool, ExperimentReport, MethodReport, OriginalSummary, ReportNotes, SequentialReport, SequentialRound, Session,
    Split, SweepPoint, SweepReport,
};
