//! Classification metrics, stratified folds, embedding compactness and the
//! signed-rank test.

mod compactness;
mod kfold;
mod metrics;
mod report;
mod wilcoxon;

pub use compactness::{compactness, Compactness};
pub use kfold::{stratified_kfold, Fold};
pub use metrics::{
    confusion, macro_metrics, small_class_report, ClassMetrics, ConfusionMatrix, MacroScores,
    MetricsReport, SMALL_CLASS_THRESHOLD,
};
pub use report::{mean_std, CrossValReport, EvalReport, FoldStats};
pub use wilcoxon::{wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};
