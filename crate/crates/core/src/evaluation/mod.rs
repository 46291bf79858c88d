//! Per-cohort, micro and macro metrics at a fixed sensitivity, stratified
//! bootstrap and paired model comparison.

mod bootstrap;
mod compare;
mod metrics;
mod report;
mod wilcoxon;

pub use bootstrap::{bootstrap_resample, summarize, BootstrapSample, Summary};
pub use compare::{compare_models, ComparisonRow, ComparisonTable, Winner};
pub use metrics::{
    auc, macro_average, macro_metric, metric_value, micro_metric, ppv_specificity, threshold_at_sensitivity, Confusion,
    Group, GroupedPredictions, Metric, DEFAULT_SENSITIVITY,
};
pub use report::{evaluate, BootstrapRow, CohortRow, EvalConfig, EvalReport, MetricSet, Scope, ThresholdMode, Thresholds};
pub use wilcoxon::{significance_tier, wilcoxon_exact_p, wilcoxon_signed_rank, Tier, WilcoxonResult, EXACT_MAX_N};
