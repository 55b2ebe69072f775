use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{at, AnalysisError, Result, Stage};
use crate::dataset::{Dataset, ImputationParams, NormParams};
use crate::deep::{self, Modality, MlpSurvModel, TrainConfig};
use crate::fusion::{self, FusionModel, ScoreSource};
use crate::pesi;
use crate::rng;
use crate::rsf::{self, ForestModel, ForestParams};

/// The six reported risk models, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pesi,
    RsfFused,
    DeepImaging,
    DeepClinical,
    DeepMultimodal,
    DeepPesiFused,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Pesi,
        ModelKind::RsfFused,
        ModelKind::DeepImaging,
        ModelKind::DeepClinical,
        ModelKind::DeepMultimodal,
        ModelKind::DeepPesiFused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pesi => "pesi",
            ModelKind::RsfFused => "rsf_fused",
            ModelKind::DeepImaging => "deep_imaging",
            ModelKind::DeepClinical => "deep_clinical",
            ModelKind::DeepMultimodal => "deep_multimodal",
            ModelKind::DeepPesiFused => "deep_pesi_fused",
        }
    }

    pub fn needs_imaging(self) -> bool {
        !matches!(self, ModelKind::Pesi | ModelKind::DeepClinical)
    }

    fn needs_clinical_head(self) -> bool {
        matches!(self, ModelKind::DeepClinical | ModelKind::DeepMultimodal | ModelKind::DeepPesiFused)
    }

    fn needs_imaging_head(self) -> bool {
        matches!(self, ModelKind::DeepImaging | ModelKind::DeepMultimodal | ModelKind::DeepPesiFused)
    }

    /// True when the score is a fused Cox linear predictor rather than a
    /// probability or a point score.
    pub fn is_fused(self) -> bool {
        matches!(self, ModelKind::RsfFused | ModelKind::DeepMultimodal | ModelKind::DeepPesiFused)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| AnalysisError::UnknownModel(s.to_string()))
    }
}

/// Transformations learned on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub imputation: ImputationParams,
    /// Per-column z-score constants for imaging features.
    pub imaging_norm: Option<Vec<NormParams>>,
}

impl Preprocessing {
    pub fn clinical_matrix(&self, ds: &Dataset) -> Result<DMatrix<f64>> {
        self.imputation.apply(ds).clinical_matrix().map_err(at(Stage::Imputation))
    }

    pub fn imaging_matrix(&self, ds: &Dataset) -> Result<DMatrix<f64>> {
        let norm = self.imaging_norm.as_ref().ok_or(AnalysisError::ModelUnavailable(ModelKind::DeepImaging))?;
        let mut x = ds.imaging_matrix().map_err(at(Stage::Scoring))?;
        if x.ncols() != norm.len() {
            return Err(AnalysisError::Stage {
                stage: Stage::Scoring,
                source: format!("imaging features have {} columns, model expects {}", x.ncols(), norm.len()).into(),
            });
        }
        for (j, p) in norm.iter().enumerate() {
            x.column_mut(j).apply(|v| *v = p.apply(*v));
        }
        Ok(x)
    }

    pub fn pesi_scores(&self, ds: &Dataset) -> Result<Vec<f64>> {
        pesi::pesi_predictor(&self.imputation.apply(ds)).map_err(at(Stage::Scoring))
    }
}

/// Every fitted component of the study. Components not needed by the
/// requested models are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub preprocessing: Preprocessing,
    pub deep_clinical: Option<MlpSurvModel>,
    pub deep_imaging: Option<MlpSurvModel>,
    pub rsf_clinical: Option<ForestModel>,
    pub rsf_imaging: Option<ForestModel>,
    pub multimodal: Option<FusionModel>,
    pub pesi_fused: Option<FusionModel>,
    pub rsf_fused: Option<FusionModel>,
}

#[derive(Default)]
struct Components {
    clin: Option<Vec<f64>>,
    img: Option<Vec<f64>>,
    pesi: Option<Vec<f64>>,
    rsf_clin: Option<Vec<f64>>,
    rsf_img: Option<Vec<f64>>,
}

fn need<T>(v: &Option<T>, kind: ModelKind) -> Result<&T> {
    v.as_ref().ok_or(AnalysisError::ModelUnavailable(kind))
}

impl FittedPipeline {
    /// Components whose presence is required to score `kind`.
    pub fn restricted_to(&self, kind: ModelKind) -> FittedPipeline {
        let keep_clin = kind.needs_clinical_head();
        let keep_img = kind.needs_imaging_head();
        let rsf = kind == ModelKind::RsfFused;
        FittedPipeline {
            preprocessing: Preprocessing {
                imputation: self.preprocessing.imputation,
                imaging_norm: if kind.needs_imaging() { self.preprocessing.imaging_norm.clone() } else { None },
            },
            deep_clinical: self.deep_clinical.clone().filter(|_| keep_clin),
            deep_imaging: self.deep_imaging.clone().filter(|_| keep_img),
            rsf_clinical: self.rsf_clinical.clone().filter(|_| rsf),
            rsf_imaging: self.rsf_imaging.clone().filter(|_| rsf),
            multimodal: self.multimodal.clone().filter(|_| kind == ModelKind::DeepMultimodal),
            pesi_fused: self.pesi_fused.clone().filter(|_| kind == ModelKind::DeepPesiFused),
            rsf_fused: self.rsf_fused.clone().filter(|_| rsf),
        }
    }

    fn components(&self, kinds: &[ModelKind], ds: &Dataset) -> Result<Components> {
        let mut c = Components::default();
        let wants = |f: fn(ModelKind) -> bool| kinds.iter().any(|k| f(*k));
        let clin_x = if wants(|k| k.needs_clinical_head() || k == ModelKind::RsfFused) {
            Some(self.preprocessing.clinical_matrix(ds)?)
        } else {
            None
        };
        let img_x = if wants(|k| k.needs_imaging()) { Some(self.preprocessing.imaging_matrix(ds)?) } else { None };
        if wants(|k| k.needs_clinical_head()) {
            let kind = ModelKind::DeepClinical;
            let x = clin_x.as_ref().ok_or(AnalysisError::ModelUnavailable(kind))?;
            c.clin = Some(need(&self.deep_clinical, kind)?.forward(x).map_err(at(Stage::Scoring))?);
        }
        if wants(|k| k.needs_imaging_head()) {
            let kind = ModelKind::DeepImaging;
            let x = img_x.as_ref().ok_or(AnalysisError::ModelUnavailable(kind))?;
            c.img = Some(need(&self.deep_imaging, kind)?.forward(x).map_err(at(Stage::Scoring))?);
        }
        if wants(|k| matches!(k, ModelKind::Pesi | ModelKind::DeepPesiFused)) {
            c.pesi = Some(self.preprocessing.pesi_scores(ds)?);
        }
        if wants(|k| k == ModelKind::RsfFused) {
            let kind = ModelKind::RsfFused;
            let (cx, ix) = (clin_x.as_ref(), img_x.as_ref());
            let (cx, ix) = (cx.ok_or(AnalysisError::ModelUnavailable(kind))?, ix.ok_or(AnalysisError::ModelUnavailable(kind))?);
            c.rsf_clin = Some(need(&self.rsf_clinical, kind)?.predict_batch(cx).map_err(at(Stage::Scoring))?);
            c.rsf_img = Some(need(&self.rsf_imaging, kind)?.predict_batch(ix).map_err(at(Stage::Scoring))?);
        }
        Ok(c)
    }

    /// Risk scores of each requested model for every record of `ds`. `ds`
    /// holds raw (unimputed) clinical values and merged imaging features.
    pub fn score_many(&self, kinds: &[ModelKind], ds: &Dataset) -> Result<BTreeMap<ModelKind, Vec<f64>>> {
        let c = self.components(kinds, ds)?;
        let fused = |model: &Option<FusionModel>, kind: ModelKind, inputs: Vec<(ScoreSource, &Option<Vec<f64>>)>| -> Result<Vec<f64>> {
            let mut map = BTreeMap::new();
            for (source, v) in inputs {
                map.insert(source, need(v, kind)?.clone());
            }
            need(model, kind)?.predict_batch(&map).map_err(at(Stage::Scoring))
        };
        let mut out = BTreeMap::new();
        for &kind in kinds {
            let scores = match kind {
                ModelKind::Pesi => need(&c.pesi, kind)?.clone(),
                ModelKind::DeepClinical => need(&c.clin, kind)?.clone(),
                ModelKind::DeepImaging => need(&c.img, kind)?.clone(),
                ModelKind::DeepMultimodal => {
                    fused(&self.multimodal, kind, vec![(ScoreSource::Clinical, &c.clin), (ScoreSource::Imaging, &c.img)])?
                }
                ModelKind::DeepPesiFused => fused(
                    &self.pesi_fused,
                    kind,
                    vec![(ScoreSource::Clinical, &c.clin), (ScoreSource::Imaging, &c.img), (ScoreSource::Pesi, &c.pesi)],
                )?,
                ModelKind::RsfFused => fused(
                    &self.rsf_fused,
                    kind,
                    vec![(ScoreSource::RsfClinical, &c.rsf_clin), (ScoreSource::RsfImaging, &c.rsf_img)],
                )?,
            };
            out.insert(kind, scores);
        }
        Ok(out)
    }

    pub fn score(&self, kind: ModelKind, ds: &Dataset) -> Result<Vec<f64>> {
        Ok(self.score_many(&[kind], ds)?.remove(&kind).expect("requested kind is scored"))
    }
}

/// Hyperparameters for every fitted component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub deep_clinical: TrainConfig,
    pub deep_imaging: TrainConfig,
    pub rsf: ForestParams,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { deep_clinical: TrainConfig::clinical(), deep_imaging: TrainConfig::imaging(), rsf: ForestParams::default() }
    }
}

fn column_norms(x: &DMatrix<f64>) -> Vec<NormParams> {
    (0..x.ncols()).map(|j| NormParams::fit(&x.column(j).iter().copied().collect::<Vec<f64>>())).collect()
}

fn train_head(
    modality: Modality,
    x: &DMatrix<f64>,
    train: &Dataset,
    xv: &DMatrix<f64>,
    val: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> std::result::Result<MlpSurvModel, deep::DeepError> {
    let cfg = TrainConfig { seed, ..config.clone() };
    let init = deep::init_model(x.ncols(), &cfg, modality)?;
    let (model, history) = deep::train(&init, x, &train.labels(), xv, &val.labels(), &cfg)?;
    log::info!(
        "{} head: {} epochs, loss {:.4} -> {:.4}",
        modality.as_str(),
        history.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// Fits the components needed by `kinds` on `train`, using `val` for early
/// stopping of the deep heads. Both datasets hold raw clinical values.
pub fn fit_pipeline(
    train: &Dataset,
    val: &Dataset,
    kinds: &[ModelKind],
    settings: &ModelSettings,
    seed: u64,
) -> Result<FittedPipeline> {
    let imputation = ImputationParams::fit(train, &train.ids()).map_err(at(Stage::Imputation))?;
    let wants = |f: fn(ModelKind) -> bool| kinds.iter().any(|k| f(*k));
    let imaging_norm = if wants(ModelKind::needs_imaging) {
        Some(column_norms(&train.imaging_matrix().map_err(at(Stage::Ingestion))?))
    } else {
        None
    };
    let preprocessing = Preprocessing { imputation, imaging_norm };
    let mut p = FittedPipeline {
        preprocessing,
        deep_clinical: None,
        deep_imaging: None,
        rsf_clinical: None,
        rsf_imaging: None,
        multimodal: None,
        pesi_fused: None,
        rsf_fused: None,
    };
    let labels = train.labels();
    let pre = &p.preprocessing;
    let clin_x = pre.clinical_matrix(train)?;
    let clin_xv = pre.clinical_matrix(val)?;
    let (img_x, img_xv) = if pre.imaging_norm.is_some() {
        (Some(pre.imaging_matrix(train)?), Some(pre.imaging_matrix(val)?))
    } else {
        (None, None)
    };

    if wants(ModelKind::needs_clinical_head) {
        let seed = rng::tagged_seed(seed, "deep_clinical");
        let m = train_head(Modality::Clinical, &clin_x, train, &clin_xv, val, &settings.deep_clinical, seed)
            .map_err(at(Stage::DeepClinical))?;
        p.deep_clinical = Some(m);
    }
    if wants(ModelKind::needs_imaging_head) {
        let (x, xv) = (img_x.as_ref().expect("imaging prepared"), img_xv.as_ref().expect("imaging prepared"));
        let seed = rng::tagged_seed(seed, "deep_imaging");
        let m = train_head(Modality::Imaging, x, train, xv, val, &settings.deep_imaging, seed)
            .map_err(at(Stage::DeepImaging))?;
        p.deep_imaging = Some(m);
    }
    if kinds.contains(&ModelKind::RsfFused) {
        let x = img_x.as_ref().expect("imaging prepared");
        let fit = |x: &DMatrix<f64>, tag: &str| {
            let params = ForestParams { seed: rng::tagged_seed(seed, tag), ..settings.rsf };
            rsf::fit_forest(x, &labels, &params).map_err(at(Stage::Rsf))
        };
        p.rsf_clinical = Some(fit(&clin_x, "rsf_clinical")?);
        p.rsf_imaging = Some(fit(x, "rsf_imaging")?);
    }

    // component scores on the training split feed the fusion fits
    let opts = fusion::default_fit_options();
    let fit_fused = |inputs: Vec<(ScoreSource, Vec<f64>)>| {
        fusion::fit_fusion(&inputs.into_iter().collect(), &labels, &opts).map_err(at(Stage::Fusion))
    };
    let clin_scores = p.deep_clinical.as_ref().map(|m| m.forward(&clin_x)).transpose().map_err(at(Stage::Fusion))?;
    let img_scores = match (&p.deep_imaging, &img_x) {
        (Some(m), Some(x)) => Some(m.forward(x).map_err(at(Stage::Fusion))?),
        _ => None,
    };
    if kinds.contains(&ModelKind::DeepMultimodal) {
        let (c, i) = (clin_scores.clone().expect("clinical head"), img_scores.clone().expect("imaging head"));
        p.multimodal = Some(fit_fused(vec![(ScoreSource::Clinical, c), (ScoreSource::Imaging, i)])?);
    }
    if kinds.contains(&ModelKind::DeepPesiFused) {
        let (c, i) = (clin_scores.expect("clinical head"), img_scores.expect("imaging head"));
        let pesi = p.preprocessing.pesi_scores(train)?;
        p.pesi_fused = Some(fit_fused(vec![(ScoreSource::Clinical, c), (ScoreSource::Imaging, i), (ScoreSource::Pesi, pesi)])?);
    }
    if kinds.contains(&ModelKind::RsfFused) {
        let x = img_x.as_ref().expect("imaging prepared");
        let rc = p.rsf_clinical.as_ref().expect("fitted").predict_batch(&clin_x).map_err(at(Stage::Fusion))?;
        let ri = p.rsf_imaging.as_ref().expect("fitted").predict_batch(x).map_err(at(Stage::Fusion))?;
        p.rsf_fused = Some(fit_fused(vec![(ScoreSource::RsfClinical, rc), (ScoreSource::RsfImaging, ri)])?);
    }
    Ok(p)
}
