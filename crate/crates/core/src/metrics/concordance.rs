use super::{check_len, MetricsError, Result};
use crate::dataset::SurvivalLabel;

/// Pair tallies behind Harrell's concordance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied_scores: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(MetricsError::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_scores as f64) / self.comparable as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Counts comparable pairs `(i, j)` with `t_i < t_j` and an event at `t_i`.
/// The pair is concordant when `score_i > score_j`.
///
/// Runs in `O(n log n)`: subjects are swept by decreasing time while a
/// Fenwick tree over score ranks holds everyone with a strictly later time.
pub fn concordance_counts(scores: &[f64], labels: &[SurvivalLabel]) -> Result<ConcordanceCounts> {
    check_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteInput);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |s: f64| sorted.partition_point(|v| *v < s);

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| labels[b].time_days.total_cmp(&labels[a].time_days));

    let mut tree = Fenwick(vec![0; sorted.len() + 1]);
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut start = 0;
    while start < order.len() {
        let t = labels[order[start]].time_days;
        let mut end = start;
        while end < order.len() && labels[order[end]].time_days == t {
            end += 1;
        }
        for &i in &order[start..end] {
            if labels[i].event {
                let r = rank(scores[i]);
                let below = tree.prefix(r);
                let at = tree.prefix(r + 1) - below;
                counts.concordant += below;
                counts.tied_scores += at;
                counts.comparable += inserted;
            }
        }
        for &i in &order[start..end] {
            tree.add(rank(scores[i]));
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

/// Harrell's concordance index; tied scores count one half.
pub fn c_index(scores: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    concordance_counts(scores, labels)?.index()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(event: bool, t: f64) -> SurvivalLabel {
        SurvivalLabel { event, time_days: t }
    }

    #[test]
    fn perfect_and_tied() {
        let labels: Vec<_> = (1..=5).map(|t| l(true, t as f64)).collect();
        let scores = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(c_index(&scores, &labels).unwrap(), 1.0);
        assert_eq!(c_index(&[1.0; 5], &labels).unwrap(), 0.5);
        let reversed = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(c_index(&reversed, &labels).unwrap(), 0.0);
    }

    #[test]
    fn censoring_and_time_ties() {
        // comparable: (0,1), (0,2), (3,1), (3,2); subject 1 is censored and
        // subjects 0 and 3 share a time, so they are not compared
        let labels = [l(true, 1.0), l(false, 2.0), l(true, 3.0), l(true, 1.0)];
        let counts = concordance_counts(&[0.9, 0.1, 0.5, 0.2], &labels).unwrap();
        assert_eq!(counts.comparable, 4);
        // 0 beats 1 and 2; 3 beats 1, loses to 2; 2 has no later subjects
        assert_eq!(counts.concordant, 3);
    }

    #[test]
    fn no_comparable_pairs() {
        let labels = [l(false, 1.0), l(false, 2.0)];
        assert_eq!(c_index(&[1.0, 2.0], &labels), Err(MetricsError::NoComparablePairs));
        assert!(matches!(c_index(&[1.0], &labels), Err(MetricsError::DimensionMismatch { .. })));
    }
}
