//! Experiment plumbing: configuration files, datasets, batch runs, reports
//! and latency measurement.

mod config;
mod dataset;
mod latency;
mod run;

pub use config::{
    validate_config, BackendConfig, ExperimentConfig, MethodConfig, MethodDefaults, RandomBackendConfig,
    ResolvedMethod, TemplatePaths, ENDPOINT_ENV,
};
pub use dataset::{attach_external_scores, load_dataset, read_jsonl, DatasetInstance, ExternalScores};
pub use latency::{measure_latency, LatencyReport, LatencyRow};
pub use run::{generate, output_text, prepare, run_experiment, Failure, Report};
