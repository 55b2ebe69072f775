//! Study workflows: risk stratification, RV-dysfunction overlay, model
//! versus PESI comparison, and the end-to-end study runner.

mod pipeline;
mod study;

pub use pipeline::{fit_pipeline, FittedPipeline, ModelKind, ModelSettings, Preprocessing};
pub use study::{
    run_study, ComparisonEntry, KmEntry, ModelEvaluation, NriEntry, NriRow, RvAnalysis, RvPatientPoint, ShortTermTable,
    FeatureImportanceRow, ScoredSplit, SplitTable, StudyData, StudyOutcome, StudyReport, StudySettings,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SurvivalLabel;
use crate::metrics::{self, bootstrap_statistics, c_index, wilcoxon_signed_rank, MetricsError, TestResult};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Pipeline step that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingestion,
    Split,
    Imputation,
    DeepClinical,
    DeepImaging,
    Rsf,
    Fusion,
    Scoring,
    Evaluation,
    Nri,
    KaplanMeier,
    RvAnalysis,
    Comparison,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Ingestion => "ingestion",
            Stage::Split => "split",
            Stage::Imputation => "imputation",
            Stage::DeepClinical => "deep clinical training",
            Stage::DeepImaging => "deep imaging training",
            Stage::Rsf => "random survival forest",
            Stage::Fusion => "fusion",
            Stage::Scoring => "scoring",
            Stage::Evaluation => "evaluation",
            Stage::Nri => "reclassification",
            Stage::KaplanMeier => "Kaplan-Meier stratification",
            Stage::RvAnalysis => "RV analysis",
            Stage::Comparison => "PESI comparison",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no scores to stratify")]
    EmptyInput,
    #[error("{0} scores but {1} ids")]
    LengthMismatch(usize, usize),
    #[error("no flag for patient {0}")]
    MissingFlag(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("model {0} is not part of this pipeline")]
    ModelUnavailable(ModelKind),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

pub(crate) fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> AnalysisError {
    move |e| AnalysisError::Stage { stage, source: Box::new(e) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum StratMethod {
    Median,
    FixedThreshold { threshold: f64 },
}

impl Default for StratMethod {
    fn default() -> Self {
        StratMethod::Median
    }
}

/// High/low partition of a cohort. Scores at or above `cut_value` are high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskStrata {
    pub high_ids: Vec<String>,
    pub low_ids: Vec<String>,
    pub cut_value: f64,
    pub method: StratMethod,
}

fn sample_median(scores: &[f64]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn stratify(scores: &[f64], ids: &[String], method: StratMethod) -> Result<RiskStrata> {
    if scores.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if scores.len() != ids.len() {
        return Err(AnalysisError::LengthMismatch(scores.len(), ids.len()));
    }
    let cut_value = match method {
        StratMethod::Median => sample_median(scores),
        StratMethod::FixedThreshold { threshold } => threshold,
    };
    let (mut high_ids, mut low_ids) = (Vec::new(), Vec::new());
    for (s, id) in scores.iter().zip(ids) {
        if *s >= cut_value {
            high_ids.push(id.clone());
        } else {
            low_ids.push(id.clone());
        }
    }
    Ok(RiskStrata { high_ids, low_ids, cut_value, method })
}

/// Degenerate inputs noted instead of dividing by zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RvIssue {
    NoRvPatients,
    NoDeaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvFactorReport {
    pub n_rv: usize,
    pub rv_high: usize,
    pub rv_high_pct: Option<f64>,
    pub n_deaths: usize,
    pub deaths_high: usize,
    pub mortality_classification_accuracy: Option<f64>,
    pub issues: Vec<RvIssue>,
}

/// Percentage rounded half away from zero to one decimal, e.g. `68.8%`.
pub fn format_pct(value: f64) -> String {
    format!("{:.1}%", (value * 10.0).round() / 10.0)
}

impl RvFactorReport {
    pub fn rv_high_pct_text(&self) -> Option<String> {
        self.rv_high_pct.map(format_pct)
    }

    pub fn accuracy_text(&self) -> Option<String> {
        self.mortality_classification_accuracy.map(format_pct)
    }
}

/// Share of RV-dysfunction patients and of deaths that fall in the high
/// stratum. Both flag maps must cover every stratified id.
pub fn rv_factor_analysis(
    strata: &RiskStrata,
    rv_flags: &BTreeMap<String, bool>,
    death_flags: &BTreeMap<String, bool>,
) -> Result<RvFactorReport> {
    let high: BTreeSet<&String> = strata.high_ids.iter().collect();
    let (mut n_rv, mut rv_high, mut n_deaths, mut deaths_high) = (0, 0, 0, 0);
    for id in strata.high_ids.iter().chain(&strata.low_ids) {
        let rv = *rv_flags.get(id).ok_or_else(|| AnalysisError::MissingFlag(id.clone()))?;
        let died = *death_flags.get(id).ok_or_else(|| AnalysisError::MissingFlag(id.clone()))?;
        let is_high = high.contains(id);
        if rv {
            n_rv += 1;
            rv_high += usize::from(is_high);
        }
        if died {
            n_deaths += 1;
            deaths_high += usize::from(is_high);
        }
    }
    let pct = |k: usize, n: usize| (n > 0).then(|| 100.0 * k as f64 / n as f64);
    let mut issues = Vec::new();
    if n_rv == 0 {
        issues.push(RvIssue::NoRvPatients);
    }
    if n_deaths == 0 {
        issues.push(RvIssue::NoDeaths);
    }
    Ok(RvFactorReport {
        n_rv,
        rv_high,
        rv_high_pct: pct(rv_high, n_rv),
        n_deaths,
        deaths_high,
        mortality_classification_accuracy: pct(deaths_high, n_deaths),
        issues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ComparisonOutcome {
    Tested { test: TestResult },
    /// Too few nonzero paired differences to run the test.
    NoDifference { nonzero_pairs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesiComparison {
    /// Mean over resamples of `c(model) − c(PESI)`.
    pub mean_difference: f64,
    pub n_resamples: usize,
    pub result: ComparisonOutcome,
}

/// Paired bootstrap of c-index differences against PESI, summarized by a
/// Wilcoxon signed-rank test over the per-resample differences.
pub fn compare_to_pesi(
    model_scores: &[f64],
    pesi_scores: &[f64],
    labels: &[SurvivalLabel],
    n_resamples: usize,
    seed: u64,
) -> std::result::Result<PesiComparison, MetricsError> {
    if model_scores.len() != labels.len() || pesi_scores.len() != labels.len() {
        return Err(MetricsError::DimensionMismatch { left: model_scores.len(), right: labels.len() });
    }
    let diffs = bootstrap_statistics(labels.len(), n_resamples, seed, |idx| {
        let l: Vec<SurvivalLabel> = idx.iter().map(|&i| labels[i]).collect();
        let m: Vec<f64> = idx.iter().map(|&i| model_scores[i]).collect();
        let p: Vec<f64> = idx.iter().map(|&i| pesi_scores[i]).collect();
        Ok(c_index(&m, &l)? - c_index(&p, &l)?)
    })?;
    let mean_difference = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let result = match wilcoxon_signed_rank(&diffs) {
        Ok(test) => ComparisonOutcome::Tested { test },
        Err(MetricsError::TooFewPairs { got, .. }) => ComparisonOutcome::NoDifference { nonzero_pairs: got },
        Err(e) => return Err(e),
    };
    Ok(PesiComparison { mean_difference, n_resamples, result })
}

/// Sigmoid of every score; used to put fused linear predictors on the
/// probability scale.
pub fn to_probability(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| metrics::sigmoid(s)).collect()
}
