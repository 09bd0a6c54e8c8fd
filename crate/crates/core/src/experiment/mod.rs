//! Cross-validation protocol: folds, the mean baseline, metrics, score
//! aggregation and experiment orchestration.

mod folds;
mod metrics;
mod report;
mod run;

pub use folds::{make_folds, FoldPlan, FoldStrategy};
pub use metrics::{accuracy_at, aggregate_predictions, baseline_predict, mae, PredictionSet};
pub use report::{comparison_table, FoldMetrics, MetricReport, Metric, TargetMetric, TargetSummary};
pub use run::{
    fold_seed, head_seed, run_experiment, CheckpointSink, ExperimentConfig, ExperimentOutput,
    Featurizer, ModelKind, PreparedCorpus, TargetFeatures,
};

/// Default accuracy tolerance.
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_FOLDS: usize = 10;
