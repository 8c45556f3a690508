use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One threshold of the empirical ROC. Scores `>= threshold` are called
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Operating points ordered from the all-negative end (threshold `+inf`)
/// to the all-positive end (threshold = lowest score).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Starts at (recall 0, precision 1); recall is non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

pub(crate) fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Input(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Cumulative (threshold, tp, fp) at each distinct score, descending.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// Empirical ROC and its trapezoidal area.
pub fn roc_auroc(scores: &[f64], labels: &[bool]) -> Result<(RocCurve, f64)> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut points = vec![OperatingPoint {
        threshold: f64::INFINITY,
        sensitivity: 0.0,
        specificity: 1.0,
    }];
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (threshold, tp, fp) in sweep(scores, labels) {
        // trapezoid in count units, normalized once at the end
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        (prev_tp, prev_fp) = (tp, fp);
        points.push(OperatingPoint {
            threshold,
            sensitivity: tp as f64 / pos as f64,
            specificity: (neg - fp) as f64 / neg as f64,
        });
    }
    Ok((RocCurve { points }, area / (pos as f64 * neg as f64)))
}

/// Precision-recall curve and average precision with step interpolation,
/// `sum over thresholds of (recall gain) * precision`.
pub fn pr_aupr(scores: &[f64], labels: &[bool]) -> Result<(PrCurve, f64)> {
    let (pos, _) = class_counts(scores, labels)?;
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for (threshold, tp, fp) in sweep(scores, labels) {
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 / pos as f64 * precision;
        prev_tp = tp;
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / pos as f64,
            precision,
        });
    }
    Ok((PrCurve { points }, ap))
}

const TARGET_SLACK: f64 = 1e-12;

/// Best sensitivity among operating points with specificity >= target.
pub fn sensitivity_at_specificity(curve: &RocCurve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.specificity + TARGET_SLACK >= target)
        .map(|p| p.sensitivity)
        .fold(0.0, f64::max)
}

/// Best specificity among operating points with sensitivity >= target.
pub fn specificity_at_sensitivity(curve: &RocCurve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.sensitivity + TARGET_SLACK >= target)
        .map(|p| p.specificity)
        .fold(0.0, f64::max)
}

/// Threshold maximizing Youden's J for the rule `score > threshold`.
///
/// Candidates are the midpoints between consecutive distinct scores plus
/// one sentinel below the minimum and one above the maximum; ties go to the
/// smallest candidate.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk candidates upward. Before the first distinct score every sample
    // is called positive.
    let (mut tp, mut tn) = (pos, 0usize);
    let lowest = scores[order[0]];
    let mut best_threshold = lowest - 1.0;
    // J scaled by pos * neg keeps the comparison exact
    let scaled_j = |tp: usize, tn: usize| (tp * neg + tn * pos) as i128 - (pos * neg) as i128;
    let mut best = scaled_j(tp, tn);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp -= 1;
            } else {
                tn += 1;
            }
            k += 1;
        }
        let threshold = match order.get(k) {
            Some(&next) => s + (scores[next] - s) / 2.0,
            None => s + 1.0,
        };
        let j = scaled_j(tp, tn);
        if j > best {
            best = j;
            best_threshold = threshold;
        }
    }
    Ok(best_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion_matrix(preds: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}
