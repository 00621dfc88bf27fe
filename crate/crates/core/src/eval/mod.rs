//! Cross-validation protocol, metrics, baselines, and result breakdowns.

mod breakdown;
mod experiment;
mod metrics;
mod report;
mod splits;
mod threshold;

pub use breakdown::{breakdown_by_length, breakdown_by_votes, default_length_bins, BreakdownRow, LengthBin, PredictionRecord};
pub use experiment::{
    default_fractions, run_experiment, run_learning_curve, validate_experiment, CurvePoint, ExperimentConfig, FoldResult,
    LearningCurve, LearningCurveConfig, LmSource, Method, MethodReport, Report, ResourcePaths, Resources,
};
pub use metrics::{compute_metrics, macro_mean, majority_baseline, micro_mean, Confusion, MeanMetrics, Metrics};
pub use splits::{kfold_splits, stratified_subsample, FoldSplit};
pub use threshold::{apply_threshold, lm_threshold_baseline, select_threshold, ThresholdChoice};
