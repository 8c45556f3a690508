use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    BootstrapPercentile,
    Wilson,
}

/// Point estimate with a confidence interval, `lo <= estimate <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCI {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: CiMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Redraws allowed per resample before giving up on it.
    pub max_redraws: usize,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
            max_redraws: 100,
        }
    }
}

impl BootstrapParams {
    fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::Parameter("bootstrap needs at least one resample".into()));
        }
        check_level(self.level)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

pub(crate) fn z_for_level(level: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

pub(crate) fn normal_two_sided_p(z: f64) -> f64 {
    (2.0 * (1.0 - Normal::standard().cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Interval plus how many single-class (undefined) draws were replaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOutcome {
    pub ci: MetricWithCI,
    pub redrawn: usize,
}

/// Draws each resample's statistic. `metric` gets the resampled unit
/// indices and returns `None` where it is undefined; those draws are
/// redrawn. Every resample has its own seed, so the result does not depend
/// on how the work is scheduled.
pub(crate) fn resample_statistics<F>(
    n_units: usize,
    params: &BootstrapParams,
    metric: F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    params.validate()?;
    if n_units < 2 {
        return Err(Error::Input(format!("bootstrap needs >= 2 units, got {n_units}")));
    }
    let draws: Vec<(Option<f64>, usize)> = (0..params.resamples)
        .into_par_iter()
        .map(|i| {
            let mut idx = vec![0usize; n_units];
            for attempt in 0..=params.max_redraws {
                let seed = derive_seed(
                    params.seed,
                    &[&(i as u64).to_le_bytes(), &(attempt as u64).to_le_bytes()],
                );
                let mut rng = rng_from(seed);
                for v in idx.iter_mut() {
                    *v = rng.random_range(0..n_units);
                }
                if let Some(stat) = metric(&idx) {
                    return (Some(stat), attempt);
                }
            }
            (None, params.max_redraws + 1)
        })
        .collect();
    let redrawn: usize = draws.iter().map(|d| d.1).sum();
    let attempts = params.resamples + redrawn;
    let exhausted = draws.iter().any(|d| d.0.is_none());
    if exhausted || redrawn * 2 > attempts {
        return Err(Error::UnstableMetric { undefined: redrawn, attempts });
    }
    Ok((draws.into_iter().filter_map(|d| d.0).collect(), redrawn))
}

/// Linear-interpolation percentile of an ascending slice, `q` in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

/// Percentile bootstrap interval of `metric` over `n_units` data units.
pub fn bootstrap_ci<F>(n_units: usize, metric: F, params: &BootstrapParams) -> Result<BootstrapOutcome>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let all: Vec<usize> = (0..n_units).collect();
    let estimate = metric(&all)
        .ok_or_else(|| Error::Degenerate("metric undefined on the full sample".into()))?;
    let (mut stats, redrawn) = resample_statistics(n_units, params, &metric)?;
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - params.level) / 2.0;
    // A skewed resample distribution can put the full-sample value just
    // outside the percentile band; widen to keep lo <= estimate <= hi.
    let lo = quantile_sorted(&stats, alpha).min(estimate);
    let hi = quantile_sorted(&stats, 1.0 - alpha).max(estimate);
    Ok(BootstrapOutcome {
        ci: MetricWithCI {
            estimate,
            lo,
            hi,
            level: params.level,
            method: CiMethod::BootstrapPercentile,
        },
        redrawn,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, level: f64) -> Result<MetricWithCI> {
    check_level(level)?;
    if n == 0 || k > n {
        return Err(Error::Parameter(format!("need 0 <= k <= n, n >= 1; got k={k}, n={n}")));
    }
    let z = z_for_level(level);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    Ok(MetricWithCI {
        estimate: p,
        lo,
        hi,
        level,
        method: CiMethod::Wilson,
    })
}
