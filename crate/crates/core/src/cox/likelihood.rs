//! Cox partial log-likelihood with Efron or Breslow handling of tied event
//! times, plus its derivatives.
//!
//! For a distinct event time with tied event set `D` (size `d`) and risk set
//! `R = {j : t_j >= t}`, writing `S_R = Σ_R e^η` and `S_D = Σ_D e^η`, the
//! contribution is
//!
//! ```text
//! Σ_{i∈D} η_i − Σ_{l=0}^{d−1} log(S_R − a_l · S_D)
//! ```
//!
//! with `a_l = l/d` for Efron and `a_l = 0` for Breslow. All exponentials are
//! taken after subtracting `max η`, which leaves every term unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CoxError;
use crate::dataset::SurvivalLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

impl TieMethod {
    fn weight(self, l: usize, d: usize) -> f64 {
        match self {
            TieMethod::Efron => l as f64 / d as f64,
            TieMethod::Breslow => 0.0,
        }
    }
}

/// Indices sorted by decreasing time, grouped by equal time.
pub(crate) fn descending_groups(labels: &[SurvivalLabel]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].time_days.total_cmp(&labels[a].time_days));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if labels[g[0]].time_days == labels[i].time_days => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn max_finite(eta: &[f64]) -> f64 {
    eta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn check_inputs(eta_len: usize, labels: &[SurvivalLabel]) -> Result<(), CoxError> {
    if eta_len != labels.len() {
        return Err(CoxError::DimensionMismatch { expected: labels.len(), found: eta_len });
    }
    if labels.iter().any(|l| !l.time_days.is_finite()) {
        return Err(CoxError::NonFiniteInput);
    }
    Ok(())
}

/// Partial log-likelihood evaluated directly on linear predictors `eta`.
pub fn partial_loglik_eta(eta: &[f64], labels: &[SurvivalLabel], ties: TieMethod) -> Result<f64, CoxError> {
    check_inputs(eta.len(), labels)?;
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFiniteInput);
    }
    if eta.is_empty() {
        return Ok(0.0);
    }
    let shift = max_finite(eta);
    let mut s_risk = 0.0;
    let mut loglik = 0.0;
    for group in descending_groups(labels) {
        let mut s_tied = 0.0;
        let mut d = 0usize;
        for &j in &group {
            let w = (eta[j] - shift).exp();
            s_risk += w;
            if labels[j].event {
                s_tied += w;
                d += 1;
                loglik += eta[j] - shift;
            }
        }
        for l in 0..d {
            loglik -= (s_risk - ties.weight(l, d) * s_tied).ln();
        }
    }
    Ok(loglik)
}

/// Log-likelihood and its gradient with respect to each linear predictor.
pub fn loglik_eta_gradient(
    eta: &[f64],
    labels: &[SurvivalLabel],
    ties: TieMethod,
) -> Result<(f64, Vec<f64>), CoxError> {
    let loglik = partial_loglik_eta(eta, labels, ties)?;
    let n = eta.len();
    if n == 0 {
        return Ok((loglik, Vec::new()));
    }
    let shift = max_finite(eta);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    // per event-time group: A = Σ_l 1/S_l for risk-set members outside D,
    // B = Σ_l (1 − a_l)/S_l for members of D
    let groups = descending_groups(labels);
    let mut coef = vec![(0.0, 0.0); groups.len()];
    let mut s_risk = 0.0;
    for (g, group) in groups.iter().enumerate() {
        let mut s_tied = 0.0;
        let mut d = 0usize;
        for &j in group {
            s_risk += w[j];
            if labels[j].event {
                s_tied += w[j];
                d += 1;
            }
        }
        let (mut a, mut b) = (0.0, 0.0);
        for l in 0..d {
            let frac = ties.weight(l, d);
            let s = s_risk - frac * s_tied;
            a += 1.0 / s;
            b += (1.0 - frac) / s;
        }
        coef[g] = (a, b);
    }

    let mut grad = vec![0.0; n];
    let mut cumulative = 0.0;
    for (g, group) in groups.iter().enumerate().rev() {
        let (a, b) = coef[g];
        cumulative += a;
        for &j in group {
            let delta = if labels[j].event { 1.0 } else { 0.0 };
            let exposure = if labels[j].event { cumulative - a + b } else { cumulative };
            grad[j] = delta - w[j] * exposure;
        }
    }
    Ok((loglik, grad))
}

/// Log-likelihood, gradient and Hessian with respect to `beta`.
pub(crate) fn loglik_derivatives(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    labels: &[SurvivalLabel],
    ties: TieMethod,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), CoxError> {
    let p = x.ncols();
    let eta: Vec<f64> = (x * beta).iter().copied().collect();
    check_inputs(eta.len(), labels)?;
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFiniteInput);
    }
    let shift = max_finite(&eta);

    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut r0 = 0.0;
    let mut r1 = DVector::zeros(p);
    let mut r2 = DMatrix::zeros(p, p);

    for group in descending_groups(labels) {
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        let mut d = 0usize;
        for &j in &group {
            let xj = x.row(j).transpose();
            let w = (eta[j] - shift).exp();
            let wx = &xj * w;
            let wxx = &wx * xj.transpose();
            r0 += w;
            r1 += &wx;
            r2 += &wxx;
            if labels[j].event {
                d += 1;
                d0 += w;
                d1 += &wx;
                d2 += &wxx;
                loglik += eta[j] - shift;
                grad += &xj;
            }
        }
        for l in 0..d {
            let a = ties.weight(l, d);
            let s0 = r0 - a * d0;
            let s1 = &r1 - &d1 * a;
            let s2 = &r2 - &d2 * a;
            loglik -= s0.ln();
            let mean = &s1 / s0;
            grad -= &mean;
            hess -= s2 / s0 - &mean * mean.transpose();
        }
    }
    Ok((loglik, grad, hess))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(event: bool, t: f64) -> SurvivalLabel {
        SurvivalLabel { event, time_days: t }
    }

    #[test]
    fn symmetric_cases() {
        let labels = [l(true, 1.0), l(true, 2.0), l(true, 3.0)];
        let ll = partial_loglik_eta(&[0.0; 3], &labels, TieMethod::Efron).unwrap();
        assert!((ll + 6f64.ln()).abs() < 1e-12);
        let labels = [l(true, 1.0), l(false, 2.0)];
        let ll = partial_loglik_eta(&[0.0; 2], &labels, TieMethod::Breslow).unwrap();
        assert!((ll + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tie_methods_differ_only_with_ties() {
        // two tied deaths among three at risk, all η = 0:
        // Breslow: −2 log 3; Efron: −log 3 − log 2
        let labels = [l(true, 1.0), l(true, 1.0), l(false, 2.0)];
        let b = partial_loglik_eta(&[0.0; 3], &labels, TieMethod::Breslow).unwrap();
        let e = partial_loglik_eta(&[0.0; 3], &labels, TieMethod::Efron).unwrap();
        assert!((b + 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!((e + 3f64.ln() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn censored_at_event_time_is_at_risk() {
        let labels = [l(true, 1.0), l(false, 1.0)];
        let ll = partial_loglik_eta(&[0.0; 2], &labels, TieMethod::Efron).unwrap();
        assert!((ll + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let labels = [l(true, 1.0)];
        assert!(matches!(
            partial_loglik_eta(&[0.0, 1.0], &labels, TieMethod::Efron),
            Err(CoxError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            partial_loglik_eta(&[f64::NAN], &labels, TieMethod::Efron),
            Err(CoxError::NonFiniteInput)
        ));
    }
}
