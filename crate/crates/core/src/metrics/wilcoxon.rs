use statrs::function::erf::erfc;

use super::{MetricsError, Result, TestResult};

/// Largest sample handled by exact enumeration; above it the normal
/// approximation with continuity correction is used.
pub const EXACT_MAX_N: usize = 20;
pub const MIN_NONZERO_PAIRS: usize = 5;

/// Twice the mid-rank of each |d|, so tied ranks stay integral.
fn doubled_midranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i..=j hold 1-based ranks i+1..=j+1; their mean doubled is i+j+2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Wilcoxon signed-rank test on paired differences; zeros are dropped.
///
/// `statistic` is W, the rank sum of positive differences. For up to
/// [`EXACT_MAX_N`] nonzero differences the two-sided p-value counts the
/// `2^n` equally likely sign assignments (by dynamic programming over rank
/// sums); beyond that a tie-corrected normal approximation is used.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<TestResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(MetricsError::NonFiniteInput);
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n < MIN_NONZERO_PAIRS {
        return Err(MetricsError::TooFewPairs { got: n, min: MIN_NONZERO_PAIRS });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, tie_sizes) = doubled_midranks(&abs);
    let w2: u64 = ranks.iter().zip(&nonzero).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let patterns = (1u64 << n) as f64;
        let le: u64 = counts[..=w2 as usize].iter().sum();
        let ge: u64 = counts[w2 as usize..].iter().sum();
        let p = (2.0 * (le.min(ge) as f64) / patterns).min(1.0);
        Ok(TestResult { statistic: w, p_value: p, method: "wilcoxon_exact".into() })
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let p = erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
        Ok(TestResult { statistic: w, p_value: p, method: "wilcoxon_normal".into() })
    }
}
