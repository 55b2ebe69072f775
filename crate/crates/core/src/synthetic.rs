//! Survival data with known proportional-hazards structure.
//!
//! All draws come from one ChaCha8 stream (see [`crate::rng`]) consumed in a
//! fixed order, so a seed reproduces a dataset exactly. Event times use the
//! exponential baseline in closed form, `t = −ln(u) / (λ·exp(η))`; censoring
//! times are `−ln(u′) / censor_rate`, or never when the rate is 0.
//!
//! Multimodal cohorts draw two independent latent factors per patient. The
//! log-hazard is `w_clin·u_clin + w_img·u_img`. The eleven clinical
//! variables are noisy views of `u_clin` and the imaging features are noisy
//! views of `u_img`, so each modality alone sees only part of the signal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::{
    Acquisition, BinaryVar, ClinicalVariables, Dataset, DatasetError, PatientRecord, SurvivalLabel,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = SyntheticError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalityPlan {
    pub img_dim: usize,
    /// Hazard weights on the clinical and imaging latent factors.
    pub latent_weights: (f64, f64),
    /// Probability that any single clinical value is blanked.
    pub missing_fraction: f64,
    pub max_acquisitions: usize,
}

impl Default for ModalityPlan {
    fn default() -> Self {
        Self { img_dim: 32, latent_weights: (1.0, 1.0), missing_fraction: 0.0, max_acquisitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub beta_true: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_rate: f64,
    pub modality_plan: Option<ModalityPlan>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { n: 1000, beta_true: vec![1.0], baseline_rate: 0.01, censor_rate: 0.005, modality_plan: None, seed: 0 }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite()) {
            return bad("baseline_rate must be positive");
        }
        if !(self.censor_rate >= 0.0 && self.censor_rate.is_finite()) {
            return bad("censor_rate must be non-negative");
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return bad("beta_true must be finite");
        }
        if let Some(p) = &self.modality_plan {
            if p.img_dim == 0 {
                return bad("img_dim must be at least 1");
            }
            if !(0.0..1.0).contains(&p.missing_fraction) {
                return bad("missing_fraction must lie in [0, 1)");
            }
            if p.max_acquisitions == 0 {
                return bad("max_acquisitions must be at least 1");
            }
            if !(p.latent_weights.0.is_finite() && p.latent_weights.1.is_finite()) {
                return bad("latent_weights must be finite");
            }
        }
        Ok(())
    }
}

fn draw_label(r: &mut rng::Rng, eta: f64, spec: &GeneratorSpec) -> SurvivalLabel {
    let t = -rng::open_unit(r).ln() / (spec.baseline_rate * eta.exp());
    let c = if spec.censor_rate > 0.0 { -rng::open_unit(r).ln() / spec.censor_rate } else { f64::INFINITY };
    if t <= c {
        SurvivalLabel::death(t)
    } else {
        SurvivalLabel::censored(c)
    }
}

/// Standard-normal covariates `X` (n × p), labels, and the true log-risk
/// `Xβ`. Per subject the stream yields the p covariates, the event uniform,
/// then the censoring uniform.
pub fn gen_cox_linear(spec: &GeneratorSpec) -> Result<(DMatrix<f64>, Vec<SurvivalLabel>, Vec<f64>)> {
    spec.validate()?;
    let p = spec.beta_true.len();
    let mut r = rng::seeded(spec.seed);
    let mut x = DMatrix::zeros(spec.n, p);
    let mut labels = Vec::with_capacity(spec.n);
    let mut risk = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut eta = 0.0;
        for j in 0..p {
            let v = rng::standard_normal(&mut r);
            x[(i, j)] = v;
            eta += spec.beta_true[j] * v;
        }
        labels.push(draw_label(&mut r, eta, spec));
        risk.push(eta);
    }
    Ok((x, labels, risk))
}

/// Prevalence of each comorbidity or abnormal vital, in [`BinaryVar::ALL`]
/// order after `Male`.
const FLAG_PREVALENCE: [f64; 9] = [0.15, 0.10, 0.12, 0.20, 0.08, 0.05, 0.05, 0.05, 0.15];
const FLAG_LOADING: f64 = 0.7;
const RV_THRESHOLD: f64 = 1.3;

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalData {
    /// Records carry clinical variables, the best acquisition's features and
    /// probability, and the RV flag.
    pub dataset: Dataset,
    /// Every acquisition, as `(patient_id, acquisition_id, acquisition)`.
    pub acquisitions: Vec<(String, String, Acquisition)>,
    pub clinical_risk: Vec<f64>,
    pub imaging_risk: Vec<f64>,
    /// `clinical_risk + imaging_risk`, the full log-hazard.
    pub true_risk: Vec<f64>,
}

pub fn patient_id(i: usize) -> String {
    format!("P{i:05}")
}

/// Multimodal cohort; `beta_true` is ignored in favour of the plan's latent
/// weights.
///
/// Per patient the stream yields: `u_clin`, `u_img`, the age noise, the sex
/// uniform, nine flag noises, `img_dim` feature noises, the RV noise, the
/// event and censoring uniforms, eleven missingness uniforms, the
/// acquisition count, then the probability and perturbations of each extra
/// acquisition.
pub fn gen_multimodal(spec: &GeneratorSpec) -> Result<MultimodalData> {
    spec.validate()?;
    let plan = spec.modality_plan.clone().ok_or_else(|| SyntheticError::InvalidSpec("modality_plan is required".into()))?;
    let std_normal = Normal::standard();
    let cuts: Vec<f64> = FLAG_PREVALENCE.iter().map(|p| std_normal.inverse_cdf(1.0 - p)).collect();
    let noise_scale = (1.0 - FLAG_LOADING * FLAG_LOADING).sqrt();
    let signal_dims = plan.img_dim.div_ceil(4);
    let (w_clin, w_img) = plan.latent_weights;

    let mut r = rng::seeded(spec.seed);
    let mut records = Vec::with_capacity(spec.n);
    let mut acquisitions = Vec::new();
    let (mut clinical_risk, mut imaging_risk, mut true_risk) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..spec.n {
        let id = patient_id(i);
        let u_clin = rng::standard_normal(&mut r);
        let u_img = rng::standard_normal(&mut r);

        let age = (62.0 + 12.0 * (FLAG_LOADING * u_clin + noise_scale * rng::standard_normal(&mut r))).round().max(18.0);
        let mut clinical = ClinicalVariables::complete(age).with(BinaryVar::Male, rng::open_unit(&mut r) < 0.5);
        for (k, var) in BinaryVar::ALL[1..].iter().enumerate() {
            let z = FLAG_LOADING * u_clin + noise_scale * rng::standard_normal(&mut r);
            clinical.set_flag(*var, Some(z > cuts[k]));
        }

        let features: Vec<f64> = (0..plan.img_dim)
            .map(|k| {
                let e = rng::standard_normal(&mut r);
                if k < signal_dims {
                    u_img + e
                } else {
                    e
                }
            })
            .collect();
        let rv = u_img + 0.5 * rng::standard_normal(&mut r) > RV_THRESHOLD;

        let (rc, ri) = (w_clin * u_clin, w_img * u_img);
        let label = draw_label(&mut r, rc + ri, spec);

        let mut missing = [false; 11];
        for m in &mut missing {
            *m = rng::open_unit(&mut r) < plan.missing_fraction;
        }
        if missing[0] {
            clinical.age_years = None;
        }
        for (k, var) in BinaryVar::ALL.iter().enumerate() {
            if missing[k + 1] {
                clinical.set_flag(*var, None);
            }
        }

        let count = 1 + rng::index(&mut r, plan.max_acquisitions);
        let best_p = 0.5 + 0.5 * rng::open_unit(&mut r);
        let best = Acquisition { pe_probability: best_p, features: features.clone() };
        let mut own = vec![best];
        for _ in 1..count {
            let p = best_p * rng::open_unit(&mut r);
            let f = features.iter().map(|v| v + 0.5 * rng::standard_normal(&mut r)).collect();
            own.push(Acquisition { pe_probability: p, features: f });
        }
        // the best acquisition is not always listed first
        let rot = i % own.len();
        own.rotate_left(rot);
        for (a, acq) in own.into_iter().enumerate() {
            acquisitions.push((id.clone(), format!("A{a}"), acq));
        }

        let mut rec = PatientRecord::new(id, clinical, label);
        rec.imaging_features = Some(features);
        rec.pe_probability = Some(best_p);
        rec.rv_dysfunction = Some(rv);
        records.push(rec);
        clinical_risk.push(rc);
        imaging_risk.push(ri);
        true_risk.push(rc + ri);
    }
    Ok(MultimodalData {
        dataset: Dataset::new(records, plan.img_dim)?,
        acquisitions,
        clinical_risk,
        imaging_risk,
        true_risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::c_index;
    use proptest::prelude::*;

    fn linear(beta: Vec<f64>, lambda: f64, censor: f64, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec { n, beta_true: beta, baseline_rate: lambda, censor_rate: censor, modality_plan: None, seed }
    }

    fn multimodal(weights: (f64, f64), n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n,
            modality_plan: Some(ModalityPlan { latent_weights: weights, ..ModalityPlan::default() }),
            seed,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn event_fraction_matches_competing_exponentials() {
        let (_, labels, _) = gen_cox_linear(&linear(vec![0.0], 0.1, 0.05, 5000, 1)).unwrap();
        let frac = labels.iter().filter(|l| l.event).count() as f64 / 5000.0;
        assert!((frac - 0.1 / 0.15).abs() < 0.03, "{frac}");
        let (_, labels, _) = gen_cox_linear(&linear(vec![0.5], 0.1, 0.0, 200, 1)).unwrap();
        assert!(labels.iter().all(|l| l.event));
    }

    #[test]
    fn true_risk_is_informative() {
        let (_, labels, risk) = gen_cox_linear(&linear(vec![1.5], 0.1, 0.05, 2000, 2)).unwrap();
        assert!(c_index(&risk, &labels).unwrap() > 0.70);
    }

    #[test]
    fn doubling_rate_halves_median_time() {
        let median = |lambda: f64| {
            let (_, labels, _) = gen_cox_linear(&linear(vec![0.0], lambda, 0.0, 5000, 3)).unwrap();
            let mut t: Vec<f64> = labels.iter().map(|l| l.time_days).collect();
            t.sort_by(f64::total_cmp);
            0.5 * (t[2499] + t[2500])
        };
        let ratio = median(0.1) / median(0.2);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_cox_linear(&linear(vec![1.0], 0.0, 0.1, 10, 0)).is_err());
        assert!(gen_cox_linear(&linear(vec![1.0], 0.1, -1.0, 10, 0)).is_err());
        assert!(gen_multimodal(&linear(vec![1.0], 0.1, 0.1, 10, 0)).is_err());
    }

    #[test]
    fn zero_imaging_loading_is_noise() {
        let d = gen_multimodal(&multimodal((1.0, 0.0), 1000, 4)).unwrap();
        let labels = d.dataset.labels();
        let signal: Vec<f64> = d.dataset.records().iter().map(|r| r.imaging_features.as_ref().unwrap()[0]).collect();
        let c = c_index(&signal, &labels).unwrap();
        assert!((c - 0.5).abs() < 0.05, "{c}");
    }

    #[test]
    fn oracle_views_are_complementary() {
        let d = gen_multimodal(&multimodal((1.0, 1.0), 2000, 5)).unwrap();
        let labels = d.dataset.labels();
        let full = c_index(&d.true_risk, &labels).unwrap();
        let clin = c_index(&d.clinical_risk, &labels).unwrap();
        let img = c_index(&d.imaging_risk, &labels).unwrap();
        assert!(full >= clin + 0.03 && full >= img + 0.03, "{full} {clin} {img}");
    }

    #[test]
    fn acquisitions_aggregate_to_best() {
        let d = gen_multimodal(&multimodal((1.0, 1.0), 50, 6)).unwrap();
        for rec in d.dataset.records() {
            let own: Vec<Acquisition> =
                d.acquisitions.iter().filter(|(p, _, _)| *p == rec.patient_id).map(|(_, _, a)| a.clone()).collect();
            let best = crate::dataset::aggregate_acquisitions(&own).unwrap();
            assert_eq!(Some(&best.features), rec.imaging_features.as_ref());
        }
    }

    #[test]
    fn missingness_and_determinism() {
        let mut spec = multimodal((1.0, 1.0), 300, 7);
        spec.modality_plan.as_mut().unwrap().missing_fraction = 0.2;
        let a = gen_multimodal(&spec).unwrap();
        let missing = a.dataset.records().iter().filter(|r| !r.clinical.is_complete()).count();
        assert!(missing > 100);
        assert_eq!(a, gen_multimodal(&spec).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn times_positive_and_flags_consistent(seed in any::<u64>(), censor in 0.0f64..0.5) {
            let spec = linear(vec![0.7, -0.3], 0.1, censor, 100, seed);
            let (_, labels, _) = gen_cox_linear(&spec).unwrap();
            prop_assert!(labels.iter().all(|l| l.time_days > 0.0 && l.time_days.is_finite()));
            if censor == 0.0 {
                prop_assert!(labels.iter().all(|l| l.event));
            }
        }
    }
}
