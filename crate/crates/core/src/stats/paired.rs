use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use super::interval::{normal_two_sided_p, resample_statistics, BootstrapParams};
use super::roc::{class_counts, pr_aupr};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Delong,
    BootstrapAupr,
    Mcnemar,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub n: usize,
}

/// Midranks (1-based, ties averaged) of `values`.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Structural components of the AUC: one placement per positive and one
/// per negative. Their means both equal the AUC.
pub(crate) struct Placements {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl Placements {
    pub fn new(scores: &[f64], labels: &[bool]) -> Self {
        let pos_scores: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg_scores: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
        let (m, n) = (pos_scores.len() as f64, neg_scores.len() as f64);
        let all = midranks(scores);
        let r_pos = midranks(&pos_scores);
        let r_neg = midranks(&neg_scores);
        let (mut ip, mut ineg) = (0, 0);
        let mut pos = Vec::with_capacity(pos_scores.len());
        let mut neg = Vec::with_capacity(neg_scores.len());
        for (k, &l) in labels.iter().enumerate() {
            if l {
                // negatives below this positive, ties counted half
                pos.push((all[k] - r_pos[ip]) / n);
                ip += 1;
            } else {
                // positives above this negative, ties counted half
                neg.push(1.0 - (all[k] - r_neg[ineg]) / m);
                ineg += 1;
            }
        }
        Self { pos, neg }
    }

    pub fn auc(&self) -> f64 {
        self.pos.iter().sum::<f64>() / self.pos.len() as f64
    }
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong test for two correlated AUROCs. `statistic` is the z score.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<ComparisonResult> {
    class_counts(scores_a, labels)?;
    class_counts(scores_b, labels)?;
    let pa = Placements::new(scores_a, labels);
    let pb = Placements::new(scores_b, labels);
    let diff = pa.auc() - pb.auc();
    let var = (covariance(&pa.pos, &pa.pos) + covariance(&pb.pos, &pb.pos)
        - 2.0 * covariance(&pa.pos, &pb.pos))
        / pa.pos.len() as f64
        + (covariance(&pa.neg, &pa.neg) + covariance(&pb.neg, &pb.neg)
            - 2.0 * covariance(&pa.neg, &pb.neg))
            / pa.neg.len() as f64;
    let n = labels.len();
    if diff == 0.0 {
        return Ok(ComparisonResult { statistic: 0.0, p_value: 1.0, method: TestMethod::Delong, n });
    }
    if !(var > 1e-300) {
        return Err(Error::Degenerate(format!(
            "AUCs differ by {diff} but the DeLong variance is zero"
        )));
    }
    let z = diff / var.sqrt();
    Ok(ComparisonResult {
        statistic: z,
        p_value: normal_two_sided_p(z),
        method: TestMethod::Delong,
        n,
    })
}

/// Paired bootstrap of the AUPR difference. `statistic` is the full-sample
/// difference `aupr(a) - aupr(b)`.
pub fn bootstrap_compare_aupr(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    params: &BootstrapParams,
) -> Result<ComparisonResult> {
    let (_, full_a) = pr_aupr(scores_a, labels)?;
    let (_, full_b) = pr_aupr(scores_b, labels)?;
    if scores_b.len() != scores_a.len() {
        return Err(Error::Input("paired score lists differ in length".into()));
    }
    let diffs = |idx: &[usize]| {
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let a: Vec<f64> = idx.iter().map(|&i| scores_a[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| scores_b[i]).collect();
        Some(pr_aupr(&a, &l).ok()?.1 - pr_aupr(&b, &l).ok()?.1)
    };
    let (stats, _) = resample_statistics(labels.len(), params, diffs)?;
    let n = stats.len() as f64;
    let le = stats.iter().filter(|&&d| d <= 0.0).count() as f64 / n;
    let ge = stats.iter().filter(|&&d| d >= 0.0).count() as f64 / n;
    Ok(ComparisonResult {
        statistic: full_a - full_b,
        p_value: (2.0 * le.min(ge)).clamp(1.0 / n, 1.0),
        method: TestMethod::BootstrapAupr,
        n: labels.len(),
    })
}

/// Discordant pairs below which the exact binomial test is used.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

/// McNemar test on paired binary predictions. `statistic` is the
/// continuity-corrected chi-square value in both branches.
pub fn mcnemar_test(preds_a: &[bool], preds_b: &[bool], labels: &[bool]) -> Result<ComparisonResult> {
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() {
        return Err(Error::Input("paired prediction lists differ in length".into()));
    }
    let (mut b, mut c) = (0usize, 0usize);
    for ((&pa, &pb), &l) in preds_a.iter().zip(preds_b).zip(labels) {
        match ((pa == l), (pb == l)) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c))
}

pub fn mcnemar_from_counts(b: usize, c: usize) -> ComparisonResult {
    let n = b + c;
    if n == 0 {
        return ComparisonResult { statistic: 0.0, p_value: 1.0, method: TestMethod::Mcnemar, n };
    }
    let diff = (b as f64 - c as f64).abs();
    let statistic = (diff - 1.0).max(0.0).powi(2) / n as f64;
    let p = if n < MCNEMAR_EXACT_BELOW {
        let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
        2.0 * binom.cdf(b.min(c) as u64)
    } else {
        1.0 - ChiSquared::new(1.0).expect("valid chi-square").cdf(statistic)
    };
    ComparisonResult {
        statistic,
        p_value: p.clamp(0.0, 1.0),
        method: TestMethod::Mcnemar,
        n,
    }
}

/// Largest nonzero count handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Wilcoxon signed-rank test on paired differences. Zeros are dropped
/// before ranking. `statistic` is the sum of positive ranks.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<ComparisonResult> {
    if let Some(d) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(Error::Input(format!("non-finite difference {d}")));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(ComparisonResult { statistic: 0.0, p_value: 1.0, method: TestMethod::Wilcoxon, n });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&nonzero).filter(|p| *p.1 > 0.0).map(|p| p.0).sum();
    let p = if n <= WILCOXON_EXACT_MAX {
        exact_signed_rank_p(&ranks, w_plus)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            normal_two_sided_p(z)
        }
    };
    Ok(ComparisonResult {
        statistic: w_plus,
        p_value: p,
        method: TestMethod::Wilcoxon,
        n,
    })
}

/// Two-sided exact p over all 2^n sign assignments. Midranks are doubled
/// so the rank sums stay integral.
fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all = 2f64.powi(ranks.len() as i32);
    let w = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::roc::roc_auroc;

    #[test]
    fn mcnemar_exact_value() {
        let r = mcnemar_from_counts(10, 2);
        assert!((r.p_value - 158.0 / 4096.0).abs() < 1e-12, "{}", r.p_value);
        assert_eq!(mcnemar_from_counts(0, 0).p_value, 1.0);
        let same = [true, false, true];
        assert_eq!(mcnemar_test(&same, &same, &[true, true, false]).unwrap().p_value, 1.0);
    }

    #[test]
    fn mcnemar_branches_agree_near_switch() {
        for b in 0..=25 {
            let c = 25 - b;
            let exact = {
                let binom = Binomial::new(0.5, 25).unwrap();
                (2.0 * binom.cdf(b.min(c) as u64)).min(1.0)
            };
            let chi = mcnemar_from_counts(b, c).p_value;
            assert!((exact - chi).abs() < 0.02, "b={b}: {exact} vs {chi}");
        }
    }

    #[test]
    fn wilcoxon_small_exact() {
        assert_eq!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap().p_value, 0.25);
        assert_eq!(wilcoxon_signed_rank(&[0.3, -0.3, 1.2, -1.2]).unwrap().p_value, 1.0);
        assert_eq!(wilcoxon_signed_rank(&[0.0, 0.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn delong_self_comparison() {
        let s = [0.1, 0.5, 0.3, 0.9, 0.7];
        let l = [false, true, false, true, false];
        let r = delong_test(&s, &s, &l).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn placements_reproduce_auroc() {
        let s = [0.2, 0.2, 0.6, 0.1, 0.6, 0.9, 0.4];
        let l = [true, false, true, false, false, true, false];
        let p = Placements::new(&s, &l);
        let (_, auc) = roc_auroc(&s, &l).unwrap();
        assert!((p.auc() - auc).abs() < 1e-12);
        let neg_mean = p.neg.iter().sum::<f64>() / p.neg.len() as f64;
        assert!((neg_mean - auc).abs() < 1e-12);
    }

    #[test]
    fn aupr_self_comparison() {
        let s = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2];
        let l = [false, true, false, true, false, true];
        let r = bootstrap_compare_aupr(&s, &s, &l, &BootstrapParams::default()).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
    }
}
