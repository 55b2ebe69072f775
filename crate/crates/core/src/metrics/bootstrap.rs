use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_len, MetricsError, Result};
use crate::dataset::SurvivalLabel;
use crate::rng;

pub const MIN_RESAMPLES: usize = 100;
/// Redraws allowed per resample before giving up.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Patient-level resample of `0..n`.
pub fn resample_indices(rng: &mut rng::Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng::index(rng, n)).collect()
}

/// Evaluates `stat` on `n_resamples` bootstrap resamples of `0..n`.
///
/// Resample `r` draws from its own stream seeded by the `r`-th seed derived
/// from `seed`, so the output is independent of thread scheduling. A
/// resample on which `stat` fails for degeneracy reasons (no comparable
/// pairs, no events, ...) is redrawn from the same stream up to
/// [`MAX_REDRAWS`] times.
pub fn bootstrap_statistics<F>(n: usize, n_resamples: usize, seed: u64, stat: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n_resamples < MIN_RESAMPLES {
        return Err(MetricsError::TooFewResamples { got: n_resamples, min: MIN_RESAMPLES });
    }
    if n == 0 {
        return Err(MetricsError::DegenerateResampling);
    }
    rng::derive_seeds(seed, n_resamples)
        .into_par_iter()
        .map(|s| {
            let mut stream = rng::seeded(s);
            for _ in 0..MAX_REDRAWS {
                let idx = resample_indices(&mut stream, n);
                match stat(&idx) {
                    Ok(v) => return Ok(v),
                    Err(e) if e.is_resample_degenerate() => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(MetricsError::DegenerateResampling)
        })
        .collect()
}

/// Linear-interpolation quantile of `values` at probability `q`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central `level` percentile interval of a bootstrap distribution.
pub fn percentile_interval(values: &[f64], level: f64) -> ConfidenceInterval {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    ConfidenceInterval { lo: quantile(&sorted, tail), hi: quantile(&sorted, 1.0 - tail) }
}

/// 95 % percentile bootstrap interval for a score metric.
pub fn bootstrap_ci<F>(
    metric_fn: F,
    scores: &[f64],
    labels: &[SurvivalLabel],
    n_resamples: usize,
    seed: u64,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64], &[SurvivalLabel]) -> Result<f64> + Sync,
{
    check_len(scores.len(), labels.len())?;
    let values = bootstrap_statistics(scores.len(), n_resamples, seed, |idx| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<SurvivalLabel> = idx.iter().map(|&i| labels[i]).collect();
        metric_fn(&s, &l)
    })?;
    Ok(percentile_interval(&values, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::c_index;

    fn labels(n: usize) -> Vec<SurvivalLabel> {
        (0..n).map(|i| SurvivalLabel { event: i % 3 != 0, time_days: (i + 1) as f64 }).collect()
    }

    #[test]
    fn constant_metric_gives_zero_width() {
        let l = labels(30);
        let ci = bootstrap_ci(|_, _| Ok(0.42), &vec![0.0; 30], &l, 200, 1).unwrap();
        assert_eq!(ci, ConfidenceInterval { lo: 0.42, hi: 0.42 });
    }

    #[test]
    fn deterministic_under_seed() {
        let l = labels(40);
        let scores: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let a = bootstrap_ci(c_index, &scores, &l, 300, 5).unwrap();
        let b = bootstrap_ci(c_index, &scores, &l, 300, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.hi);
    }

    #[test]
    fn too_few_resamples() {
        let l = labels(10);
        assert!(matches!(
            bootstrap_ci(c_index, &[0.0; 10], &l, 99, 0),
            Err(MetricsError::TooFewResamples { got: 99, .. })
        ));
    }

    #[test]
    fn hopeless_resampling_is_reported() {
        let l: Vec<SurvivalLabel> = (0..10).map(|i| SurvivalLabel { event: false, time_days: i as f64 }).collect();
        assert_eq!(bootstrap_ci(c_index, &[0.0; 10], &l, 100, 0), Err(MetricsError::DegenerateResampling));
    }

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let ci = percentile_interval(&v, 0.95);
        assert!((ci.lo - 2.5).abs() < 1e-12 && (ci.hi - 97.5).abs() < 1e-12);
    }
}
