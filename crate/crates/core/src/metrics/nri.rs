use serde::{Deserialize, Serialize};

use super::{check_len, MetricsError, Result};
use crate::dataset::SurvivalLabel;

/// Probability cut separating predicted high from low mortality.
pub const DEFAULT_NRI_THRESHOLD: f64 = 0.7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Categorical net reclassification improvement between two binarized
/// risk predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NriResult {
    pub nri: f64,
    pub event_up: usize,
    pub event_down: usize,
    pub nonevent_up: usize,
    pub nonevent_down: usize,
    pub n_events: usize,
    pub n_nonevents: usize,
    pub threshold: f64,
}

/// Scores at or above `threshold` are high risk. "Up" is a move from low
/// under `old_scores` to high under `new_scores`.
pub fn nri(old_scores: &[f64], new_scores: &[f64], labels: &[SurvivalLabel], threshold: f64) -> Result<NriResult> {
    check_len(old_scores.len(), new_scores.len())?;
    check_len(old_scores.len(), labels.len())?;
    let mut r = NriResult {
        nri: 0.0,
        event_up: 0,
        event_down: 0,
        nonevent_up: 0,
        nonevent_down: 0,
        n_events: 0,
        n_nonevents: 0,
        threshold,
    };
    for ((&o, &n), l) in old_scores.iter().zip(new_scores).zip(labels) {
        let (was, is) = (o >= threshold, n >= threshold);
        let (up, down) = (!was && is, was && !is);
        if l.event {
            r.n_events += 1;
            r.event_up += usize::from(up);
            r.event_down += usize::from(down);
        } else {
            r.n_nonevents += 1;
            r.nonevent_up += usize::from(up);
            r.nonevent_down += usize::from(down);
        }
    }
    if r.n_events == 0 {
        return Err(MetricsError::NoEvents);
    }
    if r.n_nonevents == 0 {
        return Err(MetricsError::NoNonevents);
    }
    r.nri = (r.event_up as f64 - r.event_down as f64) / r.n_events as f64
        + (r.nonevent_down as f64 - r.nonevent_up as f64) / r.n_nonevents as f64;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort() -> Vec<SurvivalLabel> {
        (0..20).map(|i| SurvivalLabel { event: i < 10, time_days: 1.0 + i as f64 }).collect()
    }

    #[test]
    fn identity_is_zero() {
        let s: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let r = nri(&s, &s, &cohort(), DEFAULT_NRI_THRESHOLD).unwrap();
        assert_eq!(r.nri, 0.0);
        assert_eq!((r.event_up, r.event_down, r.nonevent_up, r.nonevent_down), (0, 0, 0, 0));
    }

    #[test]
    fn one_event_moves_up() {
        let old = vec![0.5; 20];
        let mut new = old.clone();
        new[3] = 0.8;
        let r = nri(&old, &new, &cohort(), DEFAULT_NRI_THRESHOLD).unwrap();
        assert_eq!(r.nri, 0.1);
        assert_eq!(r.event_up, 1);
    }

    #[test]
    fn extreme_bound() {
        let labels = cohort();
        let old: Vec<f64> = labels.iter().map(|l| if l.event { 0.9 } else { 0.1 }).collect();
        let new: Vec<f64> = labels.iter().map(|l| if l.event { 0.1 } else { 0.9 }).collect();
        assert_eq!(nri(&old, &new, &labels, 0.7).unwrap().nri, -2.0);
        assert_eq!(nri(&new, &old, &labels, 0.7).unwrap().nri, 2.0);
    }

    #[test]
    fn degenerate_outcomes() {
        let all_events: Vec<SurvivalLabel> = (0..3).map(|i| SurvivalLabel { event: true, time_days: i as f64 }).collect();
        assert_eq!(nri(&[0.0; 3], &[0.0; 3], &all_events, 0.7), Err(MetricsError::NoNonevents));
        let none: Vec<SurvivalLabel> = (0..3).map(|i| SurvivalLabel { event: false, time_days: i as f64 }).collect();
        assert_eq!(nri(&[0.0; 3], &[0.0; 3], &none, 0.7), Err(MetricsError::NoEvents));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(0.8473) > 0.7 && sigmoid(0.8472) < 0.7);
    }
}
