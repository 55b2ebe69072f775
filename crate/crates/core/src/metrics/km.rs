use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::dataset::SurvivalLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

/// Product-limit survival curve with one point per distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub group_label: String,
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// `S(t)`, right-continuous; 1 before the first time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|p| p.time <= t);
        if k == 0 {
            1.0
        } else {
            self.points[k - 1].survival
        }
    }
}

pub fn km_curve(labels: &[SurvivalLabel], group_label: &str) -> Result<KmCurve> {
    if labels.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut sorted: Vec<SurvivalLabel> = labels.to_vec();
    sorted.sort_by(|a, b| a.time_days.total_cmp(&b.time_days));

    let mut points = Vec::new();
    let mut at_risk = sorted.len();
    let mut survival = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time_days;
        let (mut events, mut censored) = (0, 0);
        while i < sorted.len() && sorted[i].time_days == t {
            if sorted[i].event {
                events += 1;
            } else {
                censored += 1;
            }
            i += 1;
        }
        if events > 0 {
            survival *= (at_risk - events) as f64 / at_risk as f64;
        }
        points.push(KmPoint { time: t, survival, at_risk, events, censored });
        at_risk -= events + censored;
    }
    Ok(KmCurve { group_label: group_label.to_string(), points })
}
