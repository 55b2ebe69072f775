//! Late fusion: a Cox model over standardized per-modality risk scores.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::{fit_cox, CoxError, CoxModel, FitOptions};
use crate::dataset::{NormParams, SurvivalLabel};

/// Where a fusion covariate comes from. The derived order is the covariate
/// order inside a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreSource {
    #[serde(rename = "clin")]
    Clinical,
    #[serde(rename = "img")]
    Imaging,
    #[serde(rename = "rsf_clin")]
    RsfClinical,
    #[serde(rename = "rsf_img")]
    RsfImaging,
    #[serde(rename = "pesi")]
    Pesi,
}

impl ScoreSource {
    pub const ALL: [ScoreSource; 5] =
        [ScoreSource::Clinical, ScoreSource::Imaging, ScoreSource::RsfClinical, ScoreSource::RsfImaging, ScoreSource::Pesi];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Clinical => "clin",
            ScoreSource::Imaging => "img",
            ScoreSource::RsfClinical => "rsf_clin",
            ScoreSource::RsfImaging => "rsf_img",
            ScoreSource::Pesi => "pesi",
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error("scores for {modality} have length {found}, expected {expected}")]
    MismatchedLengths { modality: ScoreSource, expected: usize, found: usize },
    #[error("fusion needs 1 to 3 score sources, got {0}")]
    InvalidSourceCount(usize),
    #[error("missing scores for {0}")]
    MissingModality(ScoreSource),
    #[error("unexpected scores for {0}")]
    ExtraModality(ScoreSource),
    #[error("non-finite score for {0}")]
    NonFiniteScore(ScoreSource),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

pub const FUSION_RIDGE: f64 = 1e-8;

pub fn default_fit_options() -> FitOptions {
    FitOptions { ridge_penalty: FUSION_RIDGE, ..FitOptions::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub inner: CoxModel,
    pub covariate_sources: Vec<ScoreSource>,
    /// Per-source z-score constants frozen at fit time.
    pub standardization: Vec<NormParams>,
}

fn check_keys<V>(expected: &[ScoreSource], scores: &BTreeMap<ScoreSource, V>) -> Result<()> {
    if let Some(s) = expected.iter().find(|s| !scores.contains_key(s)) {
        return Err(FusionError::MissingModality(*s));
    }
    if let Some(s) = scores.keys().find(|s| !expected.contains(s)) {
        return Err(FusionError::ExtraModality(*s));
    }
    Ok(())
}

/// Fits a Cox model on the z-scored sources in `scores`, in source order.
pub fn fit_fusion(
    scores: &BTreeMap<ScoreSource, Vec<f64>>,
    labels: &[SurvivalLabel],
    options: &FitOptions,
) -> Result<FusionModel> {
    let k = scores.len();
    if !(1..=3).contains(&k) {
        return Err(FusionError::InvalidSourceCount(k));
    }
    let n = labels.len();
    for (source, v) in scores {
        if v.len() != n {
            return Err(FusionError::MismatchedLengths { modality: *source, expected: n, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FusionError::NonFiniteScore(*source));
        }
    }
    let sources: Vec<ScoreSource> = scores.keys().copied().collect();
    let standardization: Vec<NormParams> = scores.values().map(|v| NormParams::fit(v)).collect();
    let mut x = DMatrix::zeros(n, k);
    for (j, v) in scores.values().enumerate() {
        for (i, &s) in v.iter().enumerate() {
            x[(i, j)] = standardization[j].apply(s);
        }
    }
    let names = sources.iter().map(|s| s.as_str().to_string()).collect();
    let inner = fit_cox(&x, labels, options)?.with_names(names);
    Ok(FusionModel { inner, covariate_sources: sources, standardization })
}

impl FusionModel {
    fn combine(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut eta = 0.0;
        for (j, beta) in self.inner.coefficients.iter().enumerate() {
            eta += beta * self.standardization[j].apply(value_of(j));
        }
        eta
    }

    /// Fused linear predictor for one patient.
    pub fn predict_fused(&self, scores: &BTreeMap<ScoreSource, f64>) -> Result<f64> {
        check_keys(&self.covariate_sources, scores)?;
        Ok(self.combine(|j| scores[&self.covariate_sources[j]]))
    }

    pub fn predict_batch(&self, scores: &BTreeMap<ScoreSource, Vec<f64>>) -> Result<Vec<f64>> {
        check_keys(&self.covariate_sources, scores)?;
        let columns: Vec<&Vec<f64>> = self.covariate_sources.iter().map(|s| &scores[s]).collect();
        let n = columns[0].len();
        for (s, c) in self.covariate_sources.iter().zip(&columns) {
            if c.len() != n {
                return Err(FusionError::MismatchedLengths { modality: *s, expected: n, found: c.len() });
            }
        }
        Ok((0..n).map(|i| self.combine(|j| columns[j][i])).collect())
    }
}
