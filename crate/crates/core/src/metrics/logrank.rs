use statrs::function::erf::erfc;

use super::{MetricsError, Result, TestResult};
use crate::dataset::SurvivalLabel;

/// Observed-minus-expected deaths in the first group and the hypergeometric
/// variance, summed over the pooled distinct event times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogrankComponents {
    pub observed_minus_expected: f64,
    pub variance: f64,
}

impl LogrankComponents {
    pub fn chi_square(&self) -> f64 {
        if self.variance > 0.0 {
            self.observed_minus_expected.powi(2) / self.variance
        } else {
            0.0
        }
    }

    /// `|O − E| / sqrt(V)`, the standardized two-sample statistic.
    pub fn standardized(&self) -> f64 {
        if self.variance > 0.0 {
            self.observed_minus_expected.abs() / self.variance.sqrt()
        } else {
            0.0
        }
    }
}

pub fn logrank_components(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> Result<LogrankComponents> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    if !a.iter().chain(b).any(|l| l.event) {
        return Err(MetricsError::NoEvents);
    }
    let mut pooled: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|l| (l.time_days, l.event, true))
        .chain(b.iter().map(|l| (l.time_days, l.event, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut n = pooled.len() as f64;
    let mut n_a = a.len() as f64;
    let mut ome = 0.0;
    let mut var = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let (mut d, mut d_a, mut leaving, mut leaving_a) = (0.0, 0.0, 0.0, 0.0);
        while i < pooled.len() && pooled[i].0 == t {
            let (_, event, in_a) = pooled[i];
            leaving += 1.0;
            if in_a {
                leaving_a += 1.0;
            }
            if event {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = n_a / n;
            ome += d_a - d * frac;
            if n > 1.0 {
                var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        n -= leaving;
        n_a -= leaving_a;
    }
    Ok(LogrankComponents { observed_minus_expected: ome, variance: var })
}

/// Two-sample log-rank test; chi-square with one degree of freedom.
pub fn logrank_test(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> Result<TestResult> {
    let stat = logrank_components(a, b)?.chi_square();
    // upper tail of chi-square(1) is erfc(sqrt(x / 2))
    let p = if stat > 0.0 { erfc((stat / 2.0).sqrt()).clamp(0.0, 1.0) } else { 1.0 };
    Ok(TestResult { statistic: stat, p_value: p, method: "logrank".into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(event: bool, t: f64) -> SurvivalLabel {
        SurvivalLabel { event, time_days: t }
    }

    #[test]
    fn identical_groups() {
        let g = [l(true, 1.0), l(false, 2.0), l(true, 3.0)];
        let r = logrank_test(&g, &g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn symmetric_in_groups() {
        let a = [l(true, 1.0), l(true, 2.0), l(false, 5.0)];
        let b = [l(true, 3.0), l(false, 4.0), l(true, 6.0), l(false, 7.0)];
        let ab = logrank_test(&a, &b).unwrap();
        let ba = logrank_test(&b, &a).unwrap();
        assert!((ab.statistic - ba.statistic).abs() < 1e-12);
        assert!(ab.p_value > 0.0 && ab.p_value < 1.0);
    }

    #[test]
    fn two_subject_hand_case() {
        // t=1: n=2, n_a=1, d=1 from a -> O-E = 1/2, V = 1/4
        let c = logrank_components(&[l(true, 1.0)], &[l(true, 2.0)]).unwrap();
        assert_eq!(c.observed_minus_expected, 0.5);
        assert_eq!(c.variance, 0.25);
        assert_eq!(c.chi_square(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(logrank_test(&[], &[l(true, 1.0)]), Err(MetricsError::EmptyGroup));
        assert_eq!(logrank_test(&[l(false, 1.0)], &[l(false, 2.0)]), Err(MetricsError::NoEvents));
    }
}
