//! Linear Cox proportional hazards models.

mod likelihood;

pub use likelihood::{loglik_eta_gradient, partial_loglik_eta, TieMethod};
pub(crate) use likelihood::descending_groups;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SurvivalLabel;

#[derive(Debug, Error, PartialEq)]
pub enum CoxError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in covariates, coefficients or times")]
    NonFiniteInput,
    #[error("no observed events")]
    NoEvents,
    #[error("information matrix is singular; consider a positive ridge penalty")]
    SingularInformation,
    #[error("need at least p + 1 = {needed} subjects, got {n}")]
    InsufficientData { n: usize, needed: usize },
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
}

pub const MAX_STEP_HALVINGS: usize = 20;
/// Relative Newton decrement below which a rejected step counts as converged.
const ROUNDING_DECREMENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tie_method: TieMethod,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the penalized gradient.
    pub tolerance: f64,
    pub ridge_penalty: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tie_method: TieMethod::Efron, max_iterations: 100, tolerance: 1e-8, ridge_penalty: 0.0 }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), CoxError> {
        if !(self.tolerance > 0.0) {
            return Err(CoxError::InvalidOptions("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CoxError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        if !(self.ridge_penalty >= 0.0) {
            return Err(CoxError::InvalidOptions("ridge_penalty must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub coefficients: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Unpenalized partial log-likelihood at `coefficients`.
    pub log_likelihood: f64,
    pub converged: bool,
    pub n_iterations: usize,
    /// Breslow cumulative baseline hazard at each distinct event time.
    pub baseline_cumhaz: Vec<(f64, f64)>,
    pub tie_method: TieMethod,
}

/// Partial log-likelihood at `beta` for design matrix `x`.
pub fn partial_loglik(
    beta: &[f64],
    x: &DMatrix<f64>,
    labels: &[SurvivalLabel],
    ties: TieMethod,
) -> Result<f64, CoxError> {
    if x.ncols() != beta.len() {
        return Err(CoxError::DimensionMismatch { expected: x.ncols(), found: beta.len() });
    }
    if x.nrows() != labels.len() {
        return Err(CoxError::DimensionMismatch { expected: labels.len(), found: x.nrows() });
    }
    if x.iter().chain(beta).any(|v| !v.is_finite()) {
        return Err(CoxError::NonFiniteInput);
    }
    let eta: Vec<f64> = (x * DVector::from_column_slice(beta)).iter().copied().collect();
    partial_loglik_eta(&eta, labels, ties)
}

/// Analytic gradient and Hessian of the partial log-likelihood in `beta`.
pub fn loglik_gradient_hessian(
    beta: &[f64],
    x: &DMatrix<f64>,
    labels: &[SurvivalLabel],
    ties: TieMethod,
) -> Result<(f64, Vec<f64>, DMatrix<f64>), CoxError> {
    if x.ncols() != beta.len() {
        return Err(CoxError::DimensionMismatch { expected: x.ncols(), found: beta.len() });
    }
    let (ll, g, h) = likelihood::loglik_derivatives(x, &DVector::from_column_slice(beta), labels, ties)?;
    Ok((ll, g.iter().copied().collect(), h))
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Newton-Raphson maximization of the ridge-penalized partial likelihood
/// `ℓ(β) − ridge/2 · ‖β‖²`, halving any step that lowers the objective.
///
/// A fit that stalls or runs out of iterations returns its best iterate
/// with `converged == false`.
pub fn fit_cox(x: &DMatrix<f64>, labels: &[SurvivalLabel], options: &FitOptions) -> Result<CoxModel, CoxError> {
    options.validate()?;
    let (n, p) = x.shape();
    if n != labels.len() {
        return Err(CoxError::DimensionMismatch { expected: labels.len(), found: n });
    }
    if n < p + 1 {
        return Err(CoxError::InsufficientData { n, needed: p + 1 });
    }
    if !labels.iter().any(|l| l.event) {
        return Err(CoxError::NoEvents);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFiniteInput);
    }

    let ridge = options.ridge_penalty;
    let ties = options.tie_method;
    let penalized = |beta: &DVector<f64>, ll: f64| ll - 0.5 * ridge * beta.norm_squared();

    let mut beta = DVector::zeros(p);
    let (mut ll, mut grad, mut hess) = likelihood::loglik_derivatives(x, &beta, labels, ties)?;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let g_pen = &grad - &beta * ridge;
        if max_abs(&g_pen) < options.tolerance {
            converged = true;
            break;
        }
        if ridge == 0.0 && has_constant_column(x) {
            return Err(CoxError::SingularInformation);
        }
        let info = -&hess + DMatrix::identity(p, p) * ridge;
        let step = info.cholesky().ok_or(CoxError::SingularInformation)?.solve(&g_pen);
        let decrement = g_pen.dot(&step);

        let current = penalized(&beta, ll);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = &beta + &step * scale;
            if let Ok(next) = likelihood::loglik_derivatives(x, &candidate, labels, ties) {
                if penalized(&candidate, next.0) >= current {
                    accepted = Some((candidate, next));
                    break;
                }
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((candidate, (l, g, h))) => {
                beta = candidate;
                ll = l;
                grad = g;
                hess = h;
            }
            None => {
                // no step can raise a likelihood that is already flat to rounding
                converged = decrement <= ROUNDING_DECREMENT * (1.0 + current.abs());
                if !converged {
                    log::warn!("cox fit stalled after {iterations} iterations");
                }
                break;
            }
        }
    }
    if !converged && iterations >= options.max_iterations {
        let g_pen = &grad - &beta * ridge;
        converged = max_abs(&g_pen) < options.tolerance;
        if !converged {
            log::warn!("cox fit did not converge (gradient max-norm {:.3e})", max_abs(&g_pen));
        }
    }

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let baseline_cumhaz = breslow_baseline(x, &coefficients, labels);
    Ok(CoxModel {
        covariate_names: (0..p).map(|j| format!("x{j}")).collect(),
        coefficients,
        log_likelihood: ll,
        converged,
        n_iterations: iterations,
        baseline_cumhaz,
        tie_method: ties,
    })
}

fn has_constant_column(x: &DMatrix<f64>) -> bool {
    x.column_iter().any(|c| c.iter().all(|v| *v == c[0]))
}

/// Breslow estimator `H₀(t) = Σ_{t_k ≤ t} d_k / Σ_{R(t_k)} exp(βᵀx)`.
fn breslow_baseline(x: &DMatrix<f64>, beta: &[f64], labels: &[SurvivalLabel]) -> Vec<(f64, f64)> {
    let eta: Vec<f64> = (x * DVector::from_column_slice(beta)).iter().copied().collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut jumps = Vec::new();
    let mut s_risk = 0.0;
    for group in descending_groups(labels) {
        let mut d = 0usize;
        for &j in &group {
            s_risk += (eta[j] - shift).exp();
            if labels[j].event {
                d += 1;
            }
        }
        if d > 0 {
            jumps.push((labels[group[0]].time_days, d as f64 * (-shift).exp() / s_risk));
        }
    }
    jumps.reverse();
    let mut total = 0.0;
    jumps
        .into_iter()
        .map(|(t, h)| {
            total += h;
            (t, total)
        })
        .collect()
}

impl CoxModel {
    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.coefficients.len(), "one name per coefficient");
        self.covariate_names = names;
        self
    }

    /// Cumulative baseline hazard: the last step at or before `t`.
    pub fn baseline_at(&self, t: f64) -> f64 {
        let k = self.baseline_cumhaz.partition_point(|(time, _)| *time <= t);
        if k == 0 {
            0.0
        } else {
            self.baseline_cumhaz[k - 1].1
        }
    }
}

/// Linear predictor `βᵀx`; larger means higher hazard.
pub fn predict_linear(model: &CoxModel, x: &[f64]) -> Result<f64, CoxError> {
    if x.len() != model.coefficients.len() {
        return Err(CoxError::DimensionMismatch { expected: model.coefficients.len(), found: x.len() });
    }
    Ok(model.coefficients.iter().zip(x).map(|(b, v)| b * v).sum())
}

/// `S(t | x) = exp(−H₀(t) · exp(βᵀx))`.
pub fn survival_at(model: &CoxModel, x: &[f64], t: f64) -> Result<f64, CoxError> {
    let lp = predict_linear(model, x)?;
    Ok((-model.baseline_at(t) * lp.exp()).exp())
}
