//! Model assembly, optimization, cross-validation and reporting.

mod adam;
mod checks;
mod config;
mod experiments;
mod harness;
mod kfold;
mod metrics;
mod model;
mod report;

pub use adam::Adam;
pub use checks::{check_head, check_model};
pub use config::{default_seed, FusionKind, Inputs, ModelConfig, DEFAULT_SEED, SEED_ENV};
pub use experiments::{ablation_grid, expert_sweep, grid_table, run_grid};
pub use harness::{
    cross_validate, evaluate, fit, fit_all, predict, run_folds, run_stream, Dataset, FitStreams,
    FoldOutcome, StepLog, Subject, Trained,
};
pub use kfold::{kfold_split, Fold};
pub use metrics::{argmax_prediction, evaluate_metrics, Metrics, Undefined, METRIC_NAMES};
pub use model::{total_loss, Batch, FusionLayer, Loss, Model};
pub use report::{aggregate_report, Aggregate, FoldEntry, MeanStd, RunReport, REPORT_VERSION};
