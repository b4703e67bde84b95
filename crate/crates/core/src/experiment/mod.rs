//! Configuration, alpha selection, run comparison and the end-to-end pipeline.

mod config;
mod pipeline;
mod select;

pub use config::{DataSource, DiagnosticsConfig, ExperimentConfig};
pub use pipeline::{
    aggregate_reports, anchor_magnitude, encoder_config, encoder_stage, evaluated_users, load_dataset,
    metrics_csv, run_once, run_pipeline, split_stage, stage_seed, warm_stage, write_sidecar,
    AggregateRow, Dataset, PipelineOutcome, RunArtifacts, RunSummary,
};
pub use select::{
    compare_runs, comparison_csv, select_alpha, select_alpha_at, ComparisonRow, SELECT_K,
    SIGNIFICANCE_LEVEL,
};
