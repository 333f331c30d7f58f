//! Experiment orchestration: configs, dataset ingestion, sweeps over context
//! size, entropy weight and seed, estimator comparisons and plots.

pub mod config;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod report;

pub use config::{parse_seeds, ExperimentConfig, Method, TaskSource};
pub use dataset::{load_dataset, read_jsonl, TaskFile};
pub use error::{HarnessError, Result};
pub use estimators::{compare_estimators, CompareConfig, EstimatorReport};
pub use experiment::{cell_seed, cells, load_task, read_manifest, read_metrics, run_experiment, Cell, Manifest, MetricsRow};
pub use report::render_report;
