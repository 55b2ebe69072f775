//! Pulmonary Embolism Severity Index.
//!
//! Point weights and risk bands follow Aujesky et al., "Derivation and
//! validation of a prognostic model for pulmonary embolism", Am J Respir
//! Crit Care Med 2005;172:1041-1046:
//!
//! | variable                     | points      |
//! |------------------------------|-------------|
//! | age                          | age, years  |
//! | male sex                     | +10         |
//! | cancer                       | +30         |
//! | chronic heart failure        | +10         |
//! | chronic lung disease         | +10         |
//! | pulse ≥ 110/min              | +20         |
//! | systolic BP < 100 mmHg       | +30         |
//! | respiratory rate ≥ 30/min    | +20         |
//! | temperature < 36 °C          | +20         |
//! | altered mental status        | +60         |
//! | O2 saturation < 90 %         | +20         |
//!
//! Class I ≤ 65, II 66-85, III 86-105, IV 106-125, V > 125.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BinaryVar, ClinicalVariables, Dataset};

#[derive(Debug, Error, PartialEq)]
pub enum PesiError {
    #[error("clinical record has missing values")]
    UnimputedRecord,
    #[error("age must be positive, got {0}")]
    NonPositiveAge(f64),
}

/// Points added when each binary variable is present.
pub const PESI_WEIGHTS: [(BinaryVar, u32); 10] = [
    (BinaryVar::Male, 10),
    (BinaryVar::Cancer, 30),
    (BinaryVar::HeartFailure, 10),
    (BinaryVar::ChronicLungDisease, 10),
    (BinaryVar::HrGe110, 20),
    (BinaryVar::SbpLt100, 30),
    (BinaryVar::RrGe30, 20),
    (BinaryVar::TempLt36c, 20),
    (BinaryVar::AlteredMentalStatus, 60),
    (BinaryVar::O2SatLt90, 20),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskClass {
    I,
    II,
    III,
    IV,
    V,
}

impl RiskClass {
    pub fn from_score(score: u32) -> Self {
        match score {
            0..=65 => RiskClass::I,
            66..=85 => RiskClass::II,
            86..=105 => RiskClass::III,
            106..=125 => RiskClass::IV,
            _ => RiskClass::V,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::I => "I",
            RiskClass::II => "II",
            RiskClass::III => "III",
            RiskClass::IV => "IV",
            RiskClass::V => "V",
        }
    }
}

impl std::fmt::Display for RiskClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PesiResult {
    pub score: u32,
    pub risk_class: RiskClass,
}

/// Scores a fully observed record. Age contributes `round(age_years)` points.
pub fn pesi_score(clin: &ClinicalVariables) -> Result<PesiResult, PesiError> {
    let age = clin.age_years.ok_or(PesiError::UnimputedRecord)?;
    if age <= 0.0 || !age.is_finite() {
        return Err(PesiError::NonPositiveAge(age));
    }
    let mut score = age.round() as u32;
    for (var, points) in PESI_WEIGHTS {
        if clin.flag(var).ok_or(PesiError::UnimputedRecord)? {
            score += points;
        }
    }
    Ok(PesiResult { score, risk_class: RiskClass::from_score(score) })
}

/// PESI points for every record, in record order, as a risk ranking.
pub fn pesi_predictor(ds: &Dataset) -> Result<Vec<f64>, PesiError> {
    ds.records().iter().map(|r| pesi_score(&r.clinical).map(|p| f64::from(p.score))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PatientRecord, SurvivalLabel};

    #[test]
    fn worked_examples() {
        let r = pesi_score(&ClinicalVariables::complete(64.0)).unwrap();
        assert_eq!(r, PesiResult { score: 64, risk_class: RiskClass::I });

        let c = ClinicalVariables::complete(70.0)
            .with(BinaryVar::Male, true)
            .with(BinaryVar::Cancer, true)
            .with(BinaryVar::SbpLt100, true);
        assert_eq!(pesi_score(&c).unwrap(), PesiResult { score: 140, risk_class: RiskClass::V });

        assert_eq!(pesi_score(&ClinicalVariables::complete(1.0)).unwrap().score, 1);
    }

    #[test]
    fn band_edges() {
        assert_eq!(RiskClass::from_score(65), RiskClass::I);
        assert_eq!(RiskClass::from_score(66), RiskClass::II);
        assert_eq!(RiskClass::from_score(85), RiskClass::II);
        assert_eq!(RiskClass::from_score(86), RiskClass::III);
        assert_eq!(RiskClass::from_score(105), RiskClass::III);
        assert_eq!(RiskClass::from_score(106), RiskClass::IV);
        assert_eq!(RiskClass::from_score(125), RiskClass::IV);
        assert_eq!(RiskClass::from_score(126), RiskClass::V);
    }

    #[test]
    fn errors() {
        let mut c = ClinicalVariables::complete(50.0);
        c.age_years = None;
        assert_eq!(pesi_score(&c), Err(PesiError::UnimputedRecord));
        let c = ClinicalVariables::complete(50.0).with_missing(BinaryVar::RrGe30);
        assert_eq!(pesi_score(&c), Err(PesiError::UnimputedRecord));
        assert_eq!(pesi_score(&ClinicalVariables::complete(0.0)), Err(PesiError::NonPositiveAge(0.0)));
    }

    #[test]
    fn predictor_follows_age() {
        let rec = |id: &str, age: f64| PatientRecord::new(id, ClinicalVariables::complete(age), SurvivalLabel::censored(5.0));
        let ds = Dataset::new(vec![rec("a", 40.0), rec("b", 80.0)], 1).unwrap();
        let s = pesi_predictor(&ds).unwrap();
        assert!(s[1] > s[0]);
        let same = Dataset::new(vec![rec("a", 55.0), rec("b", 55.0), rec("c", 55.0)], 1).unwrap();
        assert_eq!(pesi_predictor(&same).unwrap(), vec![55.0; 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_flags_and_age(
                age in 1.0f64..110.0,
                bump in 0.0f64..30.0,
                flags in proptest::collection::vec(any::<bool>(), 10),
                which in 0usize..10,
            ) {
                let mut c = ClinicalVariables::complete(age);
                for (v, f) in BinaryVar::ALL.iter().zip(&flags) {
                    c = c.with(*v, *f);
                }
                let base = pesi_score(&c).unwrap();
                let raised = pesi_score(&c.clone().with(BinaryVar::ALL[which], true)).unwrap();
                prop_assert!(raised.score >= base.score);
                prop_assert!(raised.risk_class >= base.risk_class);
                let mut older = c.clone();
                older.age_years = Some(age + bump);
                prop_assert!(pesi_score(&older).unwrap().score >= base.score);
                prop_assert!(base.score >= age.round() as u32);
            }
        }
    }
}
