//! CSV readers and writers for the clinical and imaging-feature tables.
//!
//! Raw vitals are thresholded into PESI flags at ingest:
//! heart rate ≥ 110, systolic BP < 100, respiratory rate ≥ 30,
//! temperature < 36 °C, O2 saturation < 90 %. An empty or unparseable cell is
//! recorded as missing.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_acquisitions, Acquisition, BinaryVar, ClinicalVariables, Dataset, DatasetError, PatientRecord,
    Result, SurvivalLabel,
};

/// Column names of the clinical table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClinicalSchema {
    pub patient_id: String,
    pub age: String,
    pub sex: String,
    pub heart_rate: String,
    pub systolic_bp: String,
    pub respiratory_rate: String,
    pub temperature_c: String,
    pub altered_mental_status: String,
    pub cancer: String,
    pub heart_failure: String,
    pub chronic_lung_disease: String,
    pub o2_sat: String,
    pub event: String,
    pub time_days: String,
    /// Optional column; the table may omit it.
    pub rv_dysfunction: String,
}

impl Default for ClinicalSchema {
    fn default() -> Self {
        Self {
            patient_id: "patient_id".into(),
            age: "age".into(),
            sex: "sex".into(),
            heart_rate: "heart_rate".into(),
            systolic_bp: "systolic_bp".into(),
            respiratory_rate: "respiratory_rate".into(),
            temperature_c: "temperature_c".into(),
            altered_mental_status: "altered_mental_status".into(),
            cancer: "cancer".into(),
            heart_failure: "heart_failure".into(),
            chronic_lung_disease: "chronic_lung_disease".into(),
            o2_sat: "o2_sat".into(),
            event: "event".into(),
            time_days: "time_days".into(),
            rv_dysfunction: "rv_dysfunction".into(),
        }
    }
}

impl ClinicalSchema {
    fn required(&self) -> [&str; 14] {
        [
            &self.patient_id,
            &self.age,
            &self.sex,
            &self.heart_rate,
            &self.systolic_bp,
            &self.respiratory_rate,
            &self.temperature_c,
            &self.altered_mental_status,
            &self.cancer,
            &self.heart_failure,
            &self.chronic_lung_disease,
            &self.o2_sat,
            &self.event,
            &self.time_days,
        ]
    }

    /// Header in canonical column order.
    pub fn header(&self) -> Vec<&str> {
        let mut h = self.required().to_vec();
        h.push(&self.rv_dysfunction);
        h
    }
}

fn parse_bool(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(true),
        "0" | "false" | "no" | "n" | "f" => Some(false),
        _ => None,
    }
}

fn parse_sex(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "m" | "male" | "1" => Some(true),
        "f" | "female" | "0" => Some(false),
        _ => None,
    }
}

fn parse_num(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn column_positions(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    names
        .iter()
        .map(|n| lookup.get(n).copied().ok_or_else(|| DatasetError::MissingColumn(n.to_string())))
        .collect()
}

/// Reads a clinical table. `feature_dim` is the imaging dimension the
/// resulting dataset is configured for.
pub fn read_clinical<R: Read>(reader: R, schema: &ClinicalSchema, feature_dim: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos = column_positions(&headers, &schema.required())?;
    let rv_pos = headers.iter().position(|h| h.trim() == schema.rv_dysfunction);

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let cell = |k: usize| rec.get(pos[k]).unwrap_or("");
        let malformed = |reason: String| DatasetError::MalformedRow { row, reason };

        let id = cell(0).to_string();
        if id.is_empty() {
            return Err(malformed("empty patient id".into()));
        }
        let threshold = |k: usize, f: fn(f64) -> bool| parse_num(cell(k)).map(f);

        let mut clinical = ClinicalVariables::empty();
        clinical.age_years = parse_num(cell(1)).filter(|a| *a > 0.0);
        clinical.set_flag(BinaryVar::Male, parse_sex(cell(2)));
        clinical.set_flag(BinaryVar::HrGe110, threshold(3, |v| v >= 110.0));
        clinical.set_flag(BinaryVar::SbpLt100, threshold(4, |v| v < 100.0));
        clinical.set_flag(BinaryVar::RrGe30, threshold(5, |v| v >= 30.0));
        clinical.set_flag(BinaryVar::TempLt36c, threshold(6, |v| v < 36.0));
        clinical.set_flag(BinaryVar::AlteredMentalStatus, parse_bool(cell(7)));
        clinical.set_flag(BinaryVar::Cancer, parse_bool(cell(8)));
        clinical.set_flag(BinaryVar::HeartFailure, parse_bool(cell(9)));
        clinical.set_flag(BinaryVar::ChronicLungDisease, parse_bool(cell(10)));
        clinical.set_flag(BinaryVar::O2SatLt90, threshold(11, |v| v < 90.0));

        let event = parse_bool(cell(12)).ok_or_else(|| malformed(format!("unparseable event `{}`", cell(12))))?;
        let time = parse_num(cell(13))
            .filter(|t| *t >= 0.0)
            .ok_or_else(|| malformed(format!("invalid time_days `{}`", cell(13))))?;

        let mut record = PatientRecord::new(id, clinical, SurvivalLabel { event, time_days: time });
        record.rv_dysfunction = rv_pos.and_then(|p| rec.get(p)).and_then(parse_bool);
        records.push(record);
    }
    Dataset::new(records, feature_dim)
}

pub fn ingest_clinical(path: &Path, schema: &ClinicalSchema, feature_dim: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_clinical(file, schema, feature_dim)
}

/// Patient-level imaging features after acquisition aggregation, in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingTable {
    pub dim: usize,
    pub entries: Vec<(String, Acquisition)>,
}

impl ImagingTable {
    pub fn get(&self, id: &str) -> Option<&Acquisition> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, a)| a)
    }
}

/// Reads `patient_id, acquisition_id, pe_probability, f0..f{d-1}` and keeps
/// the highest-probability acquisition per patient.
pub fn read_imaging<R: Read>(reader: R) -> Result<ImagingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos = column_positions(&headers, &["patient_id", "acquisition_id", "pe_probability"])?;
    let mut feature_pos = Vec::new();
    loop {
        let name = format!("f{}", feature_pos.len());
        match headers.iter().position(|h| h.trim() == name) {
            Some(p) => feature_pos.push(p),
            None => break,
        }
    }
    if feature_pos.is_empty() {
        return Err(DatasetError::MissingColumn("f0".into()));
    }
    let dim = feature_pos.len();

    let mut order: Vec<String> = Vec::new();
    let mut windows: HashMap<String, Vec<Acquisition>> = HashMap::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let malformed = |reason: String| DatasetError::MalformedRow { row, reason };
        let id = rec.get(pos[0]).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(malformed("empty patient id".into()));
        }
        let prob = rec
            .get(pos[2])
            .and_then(parse_num)
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(|| malformed("pe_probability must be a number in [0, 1]".into()))?;
        let features = feature_pos
            .iter()
            .enumerate()
            .map(|(k, &p)| rec.get(p).and_then(parse_num).ok_or_else(|| malformed(format!("missing feature f{k}"))))
            .collect::<Result<Vec<f64>>>()?;
        if !windows.contains_key(&id) {
            order.push(id.clone());
        }
        windows.entry(id).or_default().push(Acquisition { pe_probability: prob, features });
    }

    let entries = order
        .into_iter()
        .map(|id| {
            let best = aggregate_acquisitions(&windows[&id])?.clone();
            Ok((id, best))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImagingTable { dim, entries })
}

pub fn ingest_imaging(path: &Path) -> Result<ImagingTable> {
    let file = std::fs::File::open(path)?;
    read_imaging(file)
}

fn flag_cell(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

/// Representative raw vital, chosen on the matching side of its threshold.
fn vital_cell(v: Option<bool>, abnormal: f64, normal: f64) -> String {
    v.map(|b| if b { abnormal } else { normal }.to_string()).unwrap_or_default()
}

/// Writes records in the canonical clinical schema. Flags that were derived
/// from vitals are written back as representative raw values that threshold
/// to the same flag.
pub fn write_clinical<W: Write>(writer: W, records: &[PatientRecord]) -> Result<()> {
    let schema = ClinicalSchema::default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.header())?;
    for r in records {
        let c = &r.clinical;
        let sex = c.flag(BinaryVar::Male).map(|m| if m { "M" } else { "F" }.to_string()).unwrap_or_default();
        w.write_record([
            r.patient_id.clone(),
            c.age_years.map(|a| a.to_string()).unwrap_or_default(),
            sex,
            vital_cell(c.flag(BinaryVar::HrGe110), 118.0, 84.0),
            vital_cell(c.flag(BinaryVar::SbpLt100), 92.0, 128.0),
            vital_cell(c.flag(BinaryVar::RrGe30), 32.0, 18.0),
            vital_cell(c.flag(BinaryVar::TempLt36c), 35.5, 37.0),
            flag_cell(c.flag(BinaryVar::AlteredMentalStatus)),
            flag_cell(c.flag(BinaryVar::Cancer)),
            flag_cell(c.flag(BinaryVar::HeartFailure)),
            flag_cell(c.flag(BinaryVar::ChronicLungDisease)),
            vital_cell(c.flag(BinaryVar::O2SatLt90), 86.0, 96.0),
            flag_cell(Some(r.label.event)),
            r.label.time_days.to_string(),
            flag_cell(r.rv_dysfunction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per acquisition in the imaging-feature schema.
pub fn write_imaging<W: Write>(writer: W, dim: usize, rows: &[(String, String, Acquisition)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id".to_string(), "acquisition_id".into(), "pe_probability".into()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (pid, aid, acq) in rows {
        if acq.features.len() != dim {
            return Err(DatasetError::InconsistentDimension { expected: dim, found: acq.features.len() });
        }
        let mut row = vec![pid.clone(), aid.clone(), acq.pe_probability.to_string()];
        row.extend(acq.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
