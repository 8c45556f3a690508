use serde::{Deserialize, Serialize};

use super::interval::{bootstrap_ci, wilson_interval, BootstrapParams, MetricWithCI};
use super::paired::{bootstrap_compare_aupr, delong_test, mcnemar_test};
use super::roc::{
    confusion_matrix, pr_aupr, roc_auroc, sensitivity_at_specificity,
    specificity_at_sensitivity, youden_threshold, ConfusionMatrix,
};
use crate::error::Result;

/// `{estimate, ci_lo, ci_hi}` as written to the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl From<MetricWithCI> for Estimate {
    fn from(m: MetricWithCI) -> Self {
        Self { estimate: m.estimate, ci_lo: m.lo, ci_hi: m.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: usize,
    pub positives: usize,
    pub auroc: Estimate,
    pub aupr: Estimate,
    pub sensitivity_at_specificity: Estimate,
    pub specificity_at_sensitivity: Estimate,
    pub youden_threshold: f64,
    pub confusion_matrix: ConfusionMatrix,
    /// Single-class bootstrap draws that had to be replaced.
    pub redrawn_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub level: String,
    pub metric: String,
    pub vs: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub case: LevelReport,
    pub slice: Option<LevelReport>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportParams {
    pub bootstrap: BootstrapParams,
    pub target_specificity: f64,
    pub target_sensitivity: f64,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapParams::default(),
            target_specificity: 0.8,
            target_sensitivity: 0.8,
        }
    }
}

fn gather(idx: &[usize], scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<bool>) {
    (idx.iter().map(|&i| scores[i]).collect(), idx.iter().map(|&i| labels[i]).collect())
}

/// Full metric block for one level of analysis (cases or slices).
pub fn evaluate_level(scores: &[f64], labels: &[bool], params: &ReportParams) -> Result<LevelReport> {
    let (curve, _) = roc_auroc(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;

    let auroc = bootstrap_ci(
        labels.len(),
        |idx| {
            let (s, l) = gather(idx, scores, labels);
            roc_auroc(&s, &l).ok().map(|r| r.1)
        },
        &params.bootstrap,
    )?;
    let aupr = bootstrap_ci(
        labels.len(),
        |idx| {
            let (s, l) = gather(idx, scores, labels);
            pr_aupr(&s, &l).ok().map(|r| r.1)
        },
        &params.bootstrap,
    )?;

    let sens = sensitivity_at_specificity(&curve, params.target_specificity);
    let spec = specificity_at_sensitivity(&curve, params.target_sensitivity);
    let level = params.bootstrap.level;
    let sens_ci = wilson_interval((sens * pos as f64).round() as usize, pos, level)?;
    let spec_ci = wilson_interval((spec * neg as f64).round() as usize, neg, level)?;

    let threshold = youden_threshold(scores, labels)?;
    let preds: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    Ok(LevelReport {
        n: labels.len(),
        positives: pos,
        auroc: auroc.ci.into(),
        aupr: aupr.ci.into(),
        sensitivity_at_specificity: sens_ci.into(),
        specificity_at_sensitivity: spec_ci.into(),
        youden_threshold: threshold,
        confusion_matrix: confusion_matrix(&preds, labels)?,
        redrawn_resamples: auroc.redrawn + aupr.redrawn,
    })
}

/// DeLong on AUROC, paired bootstrap on AUPR and McNemar on each side's
/// Youden-threshold predictions.
pub fn compare_scores(
    level: &str,
    vs: &str,
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    params: &ReportParams,
) -> Result<Vec<Comparison>> {
    let ta = youden_threshold(scores_a, labels)?;
    let tb = youden_threshold(scores_b, labels)?;
    let pa: Vec<bool> = scores_a.iter().map(|&s| s > ta).collect();
    let pb: Vec<bool> = scores_b.iter().map(|&s| s > tb).collect();
    let entry = |metric: &str, p: f64| Comparison {
        level: level.to_string(),
        metric: metric.to_string(),
        vs: vs.to_string(),
        p,
    };
    Ok(vec![
        entry("auroc", delong_test(scores_a, scores_b, labels)?.p_value),
        entry("aupr", bootstrap_compare_aupr(scores_a, scores_b, labels, &params.bootstrap)?.p_value),
        entry("accuracy_at_youden", mcnemar_test(&pa, &pb, labels)?.p_value),
    ])
}
