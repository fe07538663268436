//! Experiment configuration, run orchestration, sweeps and checkpoints.

pub mod checkpoint;
mod config;
mod run;
mod sweep;

pub use checkpoint::{load_masks, load_model_into, save_masks, save_model};
pub use config::{Arch, DataSource, ExperimentConfig, Hardness, KEYS};
pub use run::{
    build_model, load_datasets, load_test_data, metrics_csv, model_spec, prepare_data, read_metrics_csv, run_experiment,
    run_prepared, train_scoring_models, Prepared, RunSummary, METRICS_HEADER, RUN_FILES,
};
pub use sweep::{
    aggregate, aggregate_csv, expand_sweep, heatmap_csv, run_jobs_in_process, run_sweep, AggregateRow, SweepAxes,
    SweepJob,
};
