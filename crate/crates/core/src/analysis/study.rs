use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pipeline::{fit_pipeline, FittedPipeline, ModelKind, ModelSettings};
use super::{
    at, compare_to_pesi, rv_factor_analysis, stratify, to_probability, AnalysisError, PesiComparison, Result,
    RvFactorReport, Stage, StratMethod,
};
use crate::dataset::{
    clinical_feature_names, split_dataset_with, truncate_30day, Dataset, SplitAssignment, SplitRatios, SurvivalLabel,
    SHORT_TERM_HORIZON_DAYS,
};
use crate::deep;
use crate::metrics::{
    self, bootstrap_ci, bootstrap_statistics, c_index, km_curve, logrank_test, percentile_interval, ConfidenceInterval,
    KmCurve, MetricsError, NriResult, TestResult, DEFAULT_NRI_THRESHOLD,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub models: Vec<ModelKind>,
    pub hyperparameters: ModelSettings,
    pub nri_threshold: f64,
    pub n_bootstrap: usize,
    pub stratification: StratMethod,
    /// Marks the short-term table as explicitly requested; it is computed
    /// either way.
    pub truncate_30d: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            ratios: SplitRatios::default(),
            models: ModelKind::ALL.to_vec(),
            hyperparameters: ModelSettings::default(),
            nri_threshold: DEFAULT_NRI_THRESHOLD,
            n_bootstrap: 1000,
            stratification: StratMethod::Median,
            truncate_30d: false,
        }
    }
}

/// Raw cohorts: clinical values unimputed, imaging features merged.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub development: Dataset,
    pub external: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: ModelKind,
    pub c_index: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub split: String,
    pub n_patients: usize,
    pub n_events: usize,
    pub models: Vec<ModelEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermTable {
    pub horizon_days: f64,
    pub requested: bool,
    pub splits: Vec<SplitTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NriEntry {
    pub old_model: ModelKind,
    pub new_model: ModelKind,
    pub result: Option<NriResult>,
    pub ci: Option<ConfidenceInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NriRow {
    pub split: String,
    pub plus_clinical: Option<NriEntry>,
    pub plus_imaging: Option<NriEntry>,
    pub plus_pesi: Option<NriEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmEntry {
    pub split: String,
    pub model: ModelKind,
    pub stratification: StratMethod,
    pub cut_value: f64,
    pub high: KmCurve,
    pub low: Option<KmCurve>,
    pub logrank: Option<TestResult>,
}

/// One RV-dysfunction patient on both risk scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvPatientPoint {
    pub patient_id: String,
    pub linear_predictor: f64,
    pub probability: f64,
    pub high_risk: bool,
    pub died: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvAnalysis {
    pub split: String,
    pub model: ModelKind,
    pub cut_value: f64,
    pub report: RvFactorReport,
    pub rv_high_pct_text: Option<String>,
    pub accuracy_text: Option<String>,
    pub patients: Vec<RvPatientPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub split: String,
    pub model: ModelKind,
    pub comparison: Option<PesiComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub overall: Vec<SplitTable>,
    pub short_term: ShortTermTable,
    pub nri: Vec<NriRow>,
    pub km: Vec<KmEntry>,
    pub rv_analysis: Option<RvAnalysis>,
    pub comparisons: Vec<ComparisonEntry>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSplit {
    pub split: String,
    pub ids: Vec<String>,
    pub labels: Vec<SurvivalLabel>,
    pub scores: BTreeMap<ModelKind, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportanceRow {
    pub modality: String,
    pub feature: String,
    pub importance: f64,
    /// Univariate concordance on the training split (clinical only).
    pub predictive_ability: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub report: StudyReport,
    pub pipeline: FittedPipeline,
    pub assignment: SplitAssignment,
    pub scored: Vec<ScoredSplit>,
    pub feature_importance: Vec<FeatureImportanceRow>,
}

fn note(e: impl std::fmt::Display) -> Option<String> {
    Some(e.to_string())
}

fn evaluate(split: &ScoredSplit, labels: &[SurvivalLabel], models: &[ModelKind], table: &str, s: &StudySettings) -> Result<SplitTable> {
    let mut rows = Vec::new();
    for &model in models {
        let scores = &split.scores[&model];
        let row = match c_index(scores, labels) {
            Ok(c) => {
                let seed = rng::tagged_seed(s.seed, &format!("ci/{table}/{}/{model}", split.split));
                match bootstrap_ci(c_index, scores, labels, s.n_bootstrap, seed) {
                    Ok(ci) => ModelEvaluation { model, c_index: Some(c), ci: Some(ci), note: None },
                    Err(e) if e.is_resample_degenerate() || e == MetricsError::DegenerateResampling => {
                        ModelEvaluation { model, c_index: Some(c), ci: None, note: note(e) }
                    }
                    Err(e) => return Err(at(Stage::Evaluation)(e)),
                }
            }
            Err(e) if e.is_resample_degenerate() => ModelEvaluation { model, c_index: None, ci: None, note: note(e) },
            Err(e) => return Err(at(Stage::Evaluation)(e)),
        };
        rows.push(row);
    }
    Ok(SplitTable {
        split: split.split.clone(),
        n_patients: labels.len(),
        n_events: labels.iter().filter(|l| l.event).count(),
        models: rows,
    })
}

/// Scores on the probability scale used for reclassification.
fn probability_scale(model: ModelKind, scores: &[f64]) -> Vec<f64> {
    if model.is_fused() {
        to_probability(scores)
    } else {
        scores.to_vec()
    }
}

fn nri_entry(split: &ScoredSplit, old_model: ModelKind, new_model: ModelKind, s: &StudySettings) -> Result<Option<NriEntry>> {
    let (Some(old), Some(new)) = (split.scores.get(&old_model), split.scores.get(&new_model)) else {
        return Ok(None);
    };
    let (old, new) = (probability_scale(old_model, old), probability_scale(new_model, new));
    let t = s.nri_threshold;
    let result = match metrics::nri(&old, &new, &split.labels, t) {
        Ok(r) => r,
        Err(e) if e.is_resample_degenerate() => {
            return Ok(Some(NriEntry { old_model, new_model, result: None, ci: None, note: note(e) }));
        }
        Err(e) => return Err(at(Stage::Nri)(e)),
    };
    let seed = rng::tagged_seed(s.seed, &format!("nri/{}/{old_model}/{new_model}", split.split));
    let boot = bootstrap_statistics(split.labels.len(), s.n_bootstrap, seed, |idx| {
        let o: Vec<f64> = idx.iter().map(|&i| old[i]).collect();
        let n: Vec<f64> = idx.iter().map(|&i| new[i]).collect();
        let l: Vec<SurvivalLabel> = idx.iter().map(|&i| split.labels[i]).collect();
        Ok(metrics::nri(&o, &n, &l, t)?.nri)
    });
    let (ci, msg) = match boot {
        Ok(v) => (Some(percentile_interval(&v, 0.95)), None),
        Err(e) if e == MetricsError::DegenerateResampling => (None, note(e)),
        Err(e) => return Err(at(Stage::Nri)(e)),
    };
    Ok(Some(NriEntry { old_model, new_model, result: Some(result), ci, note: msg }))
}

fn km_entry(split: &ScoredSplit, model: ModelKind, s: &StudySettings) -> Result<KmEntry> {
    let scores = &split.scores[&model];
    let strata = stratify(scores, &split.ids, s.stratification)?;
    let pos: BTreeMap<&String, usize> = split.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let group = |ids: &[String]| -> Vec<SurvivalLabel> { ids.iter().map(|id| split.labels[pos[id]]).collect() };
    let (high, low) = (group(&strata.high_ids), group(&strata.low_ids));
    let curve = |labels: &[SurvivalLabel], name: &str| km_curve(labels, name).map_err(at(Stage::KaplanMeier));
    let high_curve = if high.is_empty() { KmCurve { group_label: "high".into(), points: Vec::new() } } else { curve(&high, "high")? };
    let low_curve = if low.is_empty() { None } else { Some(curve(&low, "low")?) };
    let logrank = match logrank_test(&high, &low) {
        Ok(t) => Some(t),
        Err(MetricsError::EmptyGroup | MetricsError::NoEvents) => None,
        Err(e) => return Err(at(Stage::KaplanMeier)(e)),
    };
    Ok(KmEntry {
        split: split.split.clone(),
        model,
        stratification: s.stratification,
        cut_value: strata.cut_value,
        high: high_curve,
        low: low_curve,
        logrank,
    })
}

fn rv_analysis(split: &ScoredSplit, ds: &Dataset, s: &StudySettings) -> Result<Option<RvAnalysis>> {
    let rv_flags = ds.rv_flags();
    if rv_flags.len() != ds.len() {
        return Ok(None);
    }
    let model = [ModelKind::DeepMultimodal, ModelKind::DeepPesiFused, ModelKind::RsfFused]
        .into_iter()
        .find(|m| split.scores.contains_key(m));
    let Some(model) = model else { return Ok(None) };
    let lp = &split.scores[&model];
    let strata = stratify(lp, &split.ids, s.stratification)?;
    let deaths: BTreeMap<String, bool> = split.ids.iter().zip(&split.labels).map(|(id, l)| (id.clone(), l.event)).collect();
    let report = rv_factor_analysis(&strata, &rv_flags, &deaths)?;
    let patients = split
        .ids
        .iter()
        .enumerate()
        .filter(|(_, id)| rv_flags[*id])
        .map(|(i, id)| RvPatientPoint {
            patient_id: id.clone(),
            linear_predictor: lp[i],
            probability: metrics::sigmoid(lp[i]),
            high_risk: lp[i] >= strata.cut_value,
            died: split.labels[i].event,
        })
        .collect();
    Ok(Some(RvAnalysis {
        split: split.split.clone(),
        model,
        cut_value: strata.cut_value,
        rv_high_pct_text: report.rv_high_pct_text(),
        accuracy_text: report.accuracy_text(),
        report,
        patients,
    }))
}

fn comparison(split: &ScoredSplit, model: ModelKind, s: &StudySettings) -> Result<ComparisonEntry> {
    let seed = rng::tagged_seed(s.seed, &format!("cmp/{}/{model}", split.split));
    let pesi = &split.scores[&ModelKind::Pesi];
    let (comparison, msg) = match compare_to_pesi(&split.scores[&model], pesi, &split.labels, s.n_bootstrap, seed) {
        Ok(c) => (Some(c), None),
        Err(e) if e.is_resample_degenerate() || e == MetricsError::DegenerateResampling => (None, note(e)),
        Err(e) => return Err(at(Stage::Comparison)(e)),
    };
    Ok(ComparisonEntry { split: split.split.clone(), model, comparison, note: msg })
}

fn importance_rows(pipeline: &FittedPipeline, train: &Dataset) -> Result<Vec<FeatureImportanceRow>> {
    let mut rows = Vec::new();
    if let Some(m) = &pipeline.deep_clinical {
        let imputed = pipeline.preprocessing.imputation.apply(train);
        for (k, (name, imp)) in clinical_feature_names().into_iter().zip(m.feature_importance()).enumerate() {
            let ability = match deep::predictive_ability(&imputed, k) {
                Ok(a) => Some(a),
                Err(deep::DeepError::ConstantVariable(_)) => None,
                Err(e) => return Err(at(Stage::Evaluation)(e)),
            };
            rows.push(FeatureImportanceRow { modality: "clin".into(), feature: name, importance: imp, predictive_ability: ability });
        }
    }
    if let Some(m) = &pipeline.deep_imaging {
        for (k, imp) in m.feature_importance().into_iter().enumerate() {
            rows.push(FeatureImportanceRow { modality: "img".into(), feature: format!("f{k}"), importance: imp, predictive_ability: None });
        }
    }
    Ok(rows)
}

/// Runs the full study: split, impute, train, fuse, then evaluate every
/// requested model on each split. Deterministic for a given seed.
pub fn run_study(data: &StudyData, settings: &StudySettings) -> Result<StudyOutcome> {
    let mut models: Vec<ModelKind> = settings.models.clone();
    models.sort();
    models.dedup();
    if models.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    // PESI scores back every comparison even when the column is not reported
    let mut scored_models = models.clone();
    if !scored_models.contains(&ModelKind::Pesi) {
        scored_models.insert(0, ModelKind::Pesi);
    }

    let dev = &data.development;
    let split_seed = rng::tagged_seed(settings.seed, "split");
    let assignment = split_dataset_with(dev, settings.ratios, split_seed).map_err(at(Stage::Split))?;
    let part = |ids: &[String]| -> Result<Dataset> { Ok(dev.subset(&dev.indices_of(ids).map_err(at(Stage::Split))?)) };
    let (train, val, test) = (part(&assignment.train_ids)?, part(&assignment.val_ids)?, part(&assignment.test_ids)?);
    log::info!("split {} / {} / {}", train.len(), val.len(), test.len());

    let pipeline = fit_pipeline(&train, &val, &scored_models, &settings.hyperparameters, settings.seed)?;

    let mut cohorts: Vec<(&str, &Dataset)> = vec![("train", &train), ("val", &val), ("test", &test)];
    if let Some(ext) = &data.external {
        cohorts.push(("external", ext));
    }
    let mut scored = Vec::new();
    for (name, ds) in &cohorts {
        scored.push(ScoredSplit {
            split: name.to_string(),
            ids: ds.ids(),
            labels: ds.labels(),
            scores: pipeline.score_many(&scored_models, ds)?,
        });
    }

    let mut overall = Vec::new();
    let mut short = Vec::new();
    for split in &scored {
        overall.push(evaluate(split, &split.labels, &models, "overall", settings)?);
        short.push(evaluate(split, &truncate_30day(&split.labels), &models, "short_term", settings)?);
    }

    let held_out: Vec<&ScoredSplit> = scored.iter().filter(|s| s.split == "test" || s.split == "external").collect();
    let mut nri = Vec::new();
    let mut km = Vec::new();
    let mut comparisons = Vec::new();
    for split in &held_out {
        nri.push(NriRow {
            split: split.split.clone(),
            plus_clinical: nri_entry(split, ModelKind::DeepImaging, ModelKind::DeepMultimodal, settings)?,
            plus_imaging: nri_entry(split, ModelKind::DeepClinical, ModelKind::DeepMultimodal, settings)?,
            plus_pesi: nri_entry(split, ModelKind::DeepMultimodal, ModelKind::DeepPesiFused, settings)?,
        });
        for &model in &models {
            km.push(km_entry(split, model, settings)?);
            if model != ModelKind::Pesi {
                comparisons.push(comparison(split, model, settings)?);
            }
        }
    }

    let rv = match (held_out.last(), &data.external) {
        (Some(split), Some(ext)) if split.split == "external" => rv_analysis(split, ext, settings)?,
        (Some(split), _) => rv_analysis(split, &test, settings)?,
        _ => None,
    };

    let feature_importance = importance_rows(&pipeline, &train)?;
    let report = StudyReport {
        overall,
        short_term: ShortTermTable { horizon_days: SHORT_TERM_HORIZON_DAYS, requested: settings.truncate_30d, splits: short },
        nri,
        km,
        rv_analysis: rv,
        comparisons,
        config_fingerprint: String::new(),
    };
    Ok(StudyOutcome { report, pipeline, assignment, scored, feature_importance })
}
