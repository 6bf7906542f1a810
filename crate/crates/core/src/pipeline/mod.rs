//! Sales data, the training and evaluation loop, metrics and sweeps.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use data::{ingest_csv, parse_csv, synthesize_dataset, synthesize_with, SalesDataset, SynthConfig};
pub use experiment::{
    evaluate_trained, prepare_items, run_experiment, run_experiment_detailed, train_model, ExperimentConfig,
    MetricsReport, PreparedItem, ProductMetrics, RunRecord, TrainedUnit,
};
pub use metrics::{compute_metrics, Metrics, Summary};
pub use report::{comparison_table, product_table, records_jsonl};
pub use sweep::{sweep, sweep_configs, SweepAxis, SweepRow, SweepTable};
