//! Diagnostic accuracy statistics: ROC and precision-recall analysis,
//! fixed operating points, confidence intervals and paired tests.
//!
//! Labels are `true` for the positive (hemorrhage) class. Every randomized
//! procedure takes an explicit seed.

mod interval;
mod paired;
mod report;
mod roc;

pub use interval::{bootstrap_ci, wilson_interval, BootstrapOutcome, BootstrapParams, CiMethod, MetricWithCI};
pub use paired::{
    bootstrap_compare_aupr, delong_test, mcnemar_from_counts, mcnemar_test, wilcoxon_signed_rank,
    ComparisonResult, TestMethod, MCNEMAR_EXACT_BELOW, WILCOXON_EXACT_MAX,
};
pub use report::{compare_scores, evaluate_level, Comparison, Estimate, EvaluationReport, LevelReport, ReportParams};
pub use roc::{
    confusion_matrix, pr_aupr, roc_auroc, sensitivity_at_specificity, specificity_at_sensitivity,
    youden_threshold, ConfusionMatrix, OperatingPoint, PrCurve, PrPoint, RocCurve,
};

/// AUROC from DeLong placements; equal to [`roc_auroc`] up to rounding.
pub fn placement_auroc(scores: &[f64], labels: &[bool]) -> crate::Result<f64> {
    roc::class_counts(scores, labels)?;
    Ok(paired::Placements::new(scores, labels).auc())
}
