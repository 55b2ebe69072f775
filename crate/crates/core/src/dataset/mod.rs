//! Patient records, survival labels and the preparation steps that turn raw
//! clinical exports into model-ready matrices.

mod imaging;
mod impute;
mod ingest;
mod split;

pub use imaging::{aggregate_acquisitions, normalize_volume, Acquisition, HU_MAX, HU_MIN};
pub use impute::{clinical_feature_vector, impute_missing, ImputationParams};
pub use ingest::{
    ingest_clinical, ingest_imaging, read_clinical, read_imaging, write_clinical, write_imaging,
    ClinicalSchema, ImagingTable,
};
pub use split::{split_dataset, split_dataset_with, SplitAssignment, SplitRatios};

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate patient id `{0}`")]
    DuplicatePatientId(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("survival time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("no observed value for `{0}` in the reference set")]
    AllMissingColumn(String),
    #[error("reference set is empty")]
    EmptyReference,
    #[error("unknown patient id `{0}`")]
    UnknownPatientId(String),
    #[error("record `{0}` has missing clinical values or no normalization parameters")]
    UnimputedRecord(String),
    #[error("acquisition list is empty")]
    EmptyWindowList,
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    InconsistentDimension { expected: usize, found: usize },
    #[error("volume array is empty")]
    EmptyArray,
    #[error("dataset has {n} records, at least {min} required")]
    DatasetTooSmall { n: usize, min: usize },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("record `{0}` has no imaging features")]
    MissingImaging(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Horizon used for short-term (30-day) mortality analysis.
pub const SHORT_TERM_HORIZON_DAYS: f64 = 30.0;

/// Event indicator and follow-up time. A censored label carries the last
/// recorded observation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub event: bool,
    pub time_days: f64,
}

impl SurvivalLabel {
    pub fn new(event: bool, time_days: f64) -> Result<Self> {
        if !time_days.is_finite() || time_days < 0.0 {
            return Err(DatasetError::InvalidTime(time_days));
        }
        Ok(Self { event, time_days })
    }

    /// Observed death at `time_days`. Panics on a negative or non-finite time.
    pub fn death(time_days: f64) -> Self {
        Self::new(true, time_days).expect("valid survival time")
    }

    /// Censored at `time_days`. Panics on a negative or non-finite time.
    pub fn censored(time_days: f64) -> Self {
        Self::new(false, time_days).expect("valid survival time")
    }

    pub fn truncated(self, horizon_days: f64) -> Self {
        if self.time_days > horizon_days {
            Self { event: false, time_days: horizon_days }
        } else {
            self
        }
    }
}

/// Caps follow-up at `horizon_days`; anything beyond becomes censored at the
/// horizon.
pub fn truncate_labels(labels: &[SurvivalLabel], horizon_days: f64) -> Vec<SurvivalLabel> {
    labels.iter().map(|l| l.truncated(horizon_days)).collect()
}

pub fn truncate_30day(labels: &[SurvivalLabel]) -> Vec<SurvivalLabel> {
    truncate_labels(labels, SHORT_TERM_HORIZON_DAYS)
}

/// The ten binary PESI variables, in feature-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryVar {
    Male,
    Cancer,
    HeartFailure,
    ChronicLungDisease,
    HrGe110,
    SbpLt100,
    RrGe30,
    TempLt36c,
    AlteredMentalStatus,
    O2SatLt90,
}

impl BinaryVar {
    pub const ALL: [BinaryVar; 10] = [
        BinaryVar::Male,
        BinaryVar::Cancer,
        BinaryVar::HeartFailure,
        BinaryVar::ChronicLungDisease,
        BinaryVar::HrGe110,
        BinaryVar::SbpLt100,
        BinaryVar::RrGe30,
        BinaryVar::TempLt36c,
        BinaryVar::AlteredMentalStatus,
        BinaryVar::O2SatLt90,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryVar::Male => "male",
            BinaryVar::Cancer => "cancer",
            BinaryVar::HeartFailure => "heart_failure",
            BinaryVar::ChronicLungDisease => "chronic_lung_disease",
            BinaryVar::HrGe110 => "hr_ge_110",
            BinaryVar::SbpLt100 => "sbp_lt_100",
            BinaryVar::RrGe30 => "rr_ge_30",
            BinaryVar::TempLt36c => "temp_lt_36c",
            BinaryVar::AlteredMentalStatus => "altered_mental_status",
            BinaryVar::O2SatLt90 => "o2_sat_lt_90",
        }
    }
}

/// Names of the 11 clinical feature-vector entries: normalized age followed
/// by the binary variables.
pub fn clinical_feature_names() -> Vec<String> {
    std::iter::once("age_z".to_string())
        .chain(BinaryVar::ALL.iter().map(|v| v.name().to_string()))
        .collect()
}

pub const CLINICAL_DIM: usize = 11;

/// The 11 PESI clinical variables. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVariables {
    pub age_years: Option<f64>,
    flags: [Option<bool>; 10],
}

impl ClinicalVariables {
    /// Fully observed record with the given age and every flag false.
    pub fn complete(age_years: f64) -> Self {
        Self { age_years: Some(age_years), flags: [Some(false); 10] }
    }

    /// Record with every value missing.
    pub fn empty() -> Self {
        Self { age_years: None, flags: [None; 10] }
    }

    pub fn with(mut self, var: BinaryVar, value: bool) -> Self {
        self.flags[var.index()] = Some(value);
        self
    }

    pub fn with_missing(mut self, var: BinaryVar) -> Self {
        self.flags[var.index()] = None;
        self
    }

    pub fn flag(&self, var: BinaryVar) -> Option<bool> {
        self.flags[var.index()]
    }

    pub fn set_flag(&mut self, var: BinaryVar, value: Option<bool>) {
        self.flags[var.index()] = value;
    }

    /// Missing flags in feature order: age first, then [`BinaryVar::ALL`].
    pub fn missing_mask(&self) -> [bool; CLINICAL_DIM] {
        let mut mask = [false; CLINICAL_DIM];
        mask[0] = self.age_years.is_none();
        for (i, f) in self.flags.iter().enumerate() {
            mask[i + 1] = f.is_none();
        }
        mask
    }

    pub fn is_complete(&self) -> bool {
        self.age_years.is_some() && self.flags.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub clinical: ClinicalVariables,
    pub label: SurvivalLabel,
    pub imaging_features: Option<Vec<f64>>,
    pub pe_probability: Option<f64>,
    pub rv_dysfunction: Option<bool>,
    pub pesi_score: Option<u32>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, clinical: ClinicalVariables, label: SurvivalLabel) -> Self {
        Self {
            patient_id: patient_id.into(),
            clinical,
            label,
            imaging_features: None,
            pe_probability: None,
            rv_dysfunction: None,
            pesi_score: None,
        }
    }
}

/// Mean and standard deviation used to z-score age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: f64,
    pub std: f64,
}

impl NormParams {
    /// Population mean/std of `values`. A zero spread is replaced by 1 so the
    /// transform stays defined.
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self { mean, std: if std > 0.0 && std.is_finite() { std } else { 1.0 } }
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }
}

/// An ordered, immutable collection of patient records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<PatientRecord>,
    feature_dim: usize,
    age_norm: Option<NormParams>,
}

pub const DEFAULT_FEATURE_DIM: usize = 2048;

impl Dataset {
    pub fn new(records: Vec<PatientRecord>, feature_dim: usize) -> Result<Self> {
        let mut seen = HashMap::with_capacity(records.len());
        for r in &records {
            if seen.insert(r.patient_id.as_str(), ()).is_some() {
                return Err(DatasetError::DuplicatePatientId(r.patient_id.clone()));
            }
            if let Some(f) = &r.imaging_features {
                if f.len() != feature_dim {
                    return Err(DatasetError::InconsistentDimension { expected: feature_dim, found: f.len() });
                }
            }
        }
        Ok(Self { records, feature_dim, age_norm: None })
    }

    pub(crate) fn with_age_norm(mut self, params: NormParams) -> Self {
        self.age_norm = Some(params);
        self
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn age_norm(&self) -> Option<NormParams> {
        self.age_norm
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<SurvivalLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.patient_id.as_str(), i)).collect()
    }

    /// Positions of `ids` in record order of the request.
    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        let lookup = self.index_of();
        ids.iter()
            .map(|id| lookup.get(id.as_str()).copied().ok_or_else(|| DatasetError::UnknownPatientId(id.clone())))
            .collect()
    }

    /// Records at `indices`, keeping normalization parameters.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_dim: self.feature_dim,
            age_norm: self.age_norm,
        }
    }

    /// Attaches aggregated imaging features; records absent from the table
    /// keep `None`.
    pub fn with_imaging(&self, table: &ImagingTable) -> Result<Dataset> {
        let mut records = self.records.clone();
        let known: HashMap<&str, usize> =
            self.records.iter().enumerate().map(|(i, r)| (r.patient_id.as_str(), i)).collect();
        let mut unknown = 0;
        for (id, acq) in &table.entries {
            match known.get(id.as_str()) {
                Some(&i) => {
                    records[i].imaging_features = Some(acq.features.clone());
                    records[i].pe_probability = Some(acq.pe_probability);
                }
                None => unknown += 1,
            }
        }
        if unknown > 0 {
            log::warn!("imaging features for {unknown} patients not in the clinical table were ignored");
        }
        let mut ds = Dataset::new(records, table.dim)?;
        ds.age_norm = self.age_norm;
        Ok(ds)
    }

    /// Records with `pesi_score` filled in.
    pub fn with_pesi(&self) -> std::result::Result<Dataset, crate::pesi::PesiError> {
        let mut ds = self.clone();
        for r in &mut ds.records {
            r.pesi_score = Some(crate::pesi::pesi_score(&r.clinical)?.score);
        }
        Ok(ds)
    }

    /// n×11 clinical design matrix using the stored age normalization.
    pub fn clinical_matrix(&self) -> Result<DMatrix<f64>> {
        let params = self
            .age_norm
            .ok_or_else(|| DatasetError::UnimputedRecord(self.records.first().map(|r| r.patient_id.clone()).unwrap_or_default()))?;
        let mut m = DMatrix::zeros(self.len(), CLINICAL_DIM);
        for (i, r) in self.records.iter().enumerate() {
            let v = clinical_feature_vector(r, &params)?;
            for (j, x) in v.iter().enumerate() {
                m[(i, j)] = *x;
            }
        }
        Ok(m)
    }

    /// n×d imaging matrix; every record must carry features.
    pub fn imaging_matrix(&self) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.len(), self.feature_dim);
        for (i, r) in self.records.iter().enumerate() {
            let f = r.imaging_features.as_ref().ok_or_else(|| DatasetError::MissingImaging(r.patient_id.clone()))?;
            for (j, x) in f.iter().enumerate() {
                m[(i, j)] = *x;
            }
        }
        Ok(m)
    }

    pub fn rv_flags(&self) -> BTreeMap<String, bool> {
        self.records
            .iter()
            .filter_map(|r| r.rv_dysfunction.map(|f| (r.patient_id.clone(), f)))
            .collect()
    }
}
