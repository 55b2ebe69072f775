use serde::{Deserialize, Serialize};

use super::{BinaryVar, Dataset, DatasetError, NormParams, PatientRecord, Result, CLINICAL_DIM};

/// Fill values and age normalization learned from a reference cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationParams {
    pub age_median: f64,
    pub flag_medians: [bool; 10],
    pub age_norm: NormParams,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ImputationParams {
    /// Learns fill values from the records named in `reference`.
    ///
    /// A binary median of exactly 0.5 imputes `false`. Age statistics are
    /// taken after the reference ages themselves have been imputed, which
    /// makes imputation idempotent.
    pub fn fit(ds: &Dataset, reference: &[String]) -> Result<Self> {
        if reference.is_empty() {
            return Err(DatasetError::EmptyReference);
        }
        let idx = ds.indices_of(reference)?;
        let refs: Vec<&PatientRecord> = idx.iter().map(|&i| &ds.records()[i]).collect();

        let mut observed: Vec<f64> = refs.iter().filter_map(|r| r.clinical.age_years).collect();
        if observed.is_empty() {
            return Err(DatasetError::AllMissingColumn("age".into()));
        }
        let age_median = median(&mut observed);

        let mut flag_medians = [false; 10];
        for var in BinaryVar::ALL {
            let (ones, zeros) = refs.iter().fold((0usize, 0usize), |(o, z), r| match r.clinical.flag(var) {
                Some(true) => (o + 1, z),
                Some(false) => (o, z + 1),
                None => (o, z),
            });
            if ones + zeros == 0 {
                return Err(DatasetError::AllMissingColumn(var.name().into()));
            }
            // the sorted 0/1 median exceeds 0.5 exactly when ones outnumber zeros
            flag_medians[var.index()] = ones > zeros;
        }

        let filled: Vec<f64> = refs.iter().map(|r| r.clinical.age_years.unwrap_or(age_median)).collect();
        Ok(Self { age_median, flag_medians, age_norm: NormParams::fit(&filled) })
    }

    pub fn apply_record(&self, record: &PatientRecord) -> PatientRecord {
        let mut r = record.clone();
        if r.clinical.age_years.is_none() {
            r.clinical.age_years = Some(self.age_median);
        }
        for var in BinaryVar::ALL {
            if r.clinical.flag(var).is_none() {
                r.clinical.set_flag(var, Some(self.flag_medians[var.index()]));
            }
        }
        r
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let records = ds.records().iter().map(|r| self.apply_record(r)).collect();
        Dataset::new(records, ds.feature_dim())
            .expect("imputation preserves ids and dimensions")
            .with_age_norm(self.age_norm)
    }
}

/// Imputes every record using statistics from `reference` and records the
/// reference age normalization on the returned dataset.
pub fn impute_missing(ds: &Dataset, reference: &[String]) -> Result<Dataset> {
    Ok(ImputationParams::fit(ds, reference)?.apply(ds))
}

/// Normalized age followed by the ten binary indicators.
pub fn clinical_feature_vector(record: &PatientRecord, params: &NormParams) -> Result<[f64; CLINICAL_DIM]> {
    let c = &record.clinical;
    let unimputed = || DatasetError::UnimputedRecord(record.patient_id.clone());
    let mut v = [0.0; CLINICAL_DIM];
    v[0] = params.apply(c.age_years.ok_or_else(unimputed)?);
    for var in BinaryVar::ALL {
        v[var.index() + 1] = if c.flag(var).ok_or_else(unimputed)? { 1.0 } else { 0.0 };
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClinicalVariables, SurvivalLabel};

    fn rec(id: &str, clinical: ClinicalVariables) -> PatientRecord {
        PatientRecord::new(id, clinical, SurvivalLabel::censored(10.0))
    }

    fn ids(ds: &Dataset) -> Vec<String> {
        ds.ids()
    }

    #[test]
    fn binary_median_majority() {
        let c = |v: bool| ClinicalVariables::complete(50.0).with(BinaryVar::Cancer, v);
        let ds = Dataset::new(
            vec![
                rec("a", c(true)),
                rec("b", c(false)),
                rec("c", c(true)),
                rec("d", ClinicalVariables::complete(50.0).with_missing(BinaryVar::Cancer)),
            ],
            1,
        )
        .unwrap();
        let out = impute_missing(&ds, &ids(&ds)).unwrap();
        assert_eq!(out.records()[3].clinical.flag(BinaryVar::Cancer), Some(true));
    }

    #[test]
    fn binary_median_tie_imputes_false() {
        let c = |v: bool| ClinicalVariables::complete(50.0).with(BinaryVar::Cancer, v);
        let ds = Dataset::new(
            vec![
                rec("a", c(true)),
                rec("b", c(false)),
                rec("d", ClinicalVariables::complete(50.0).with_missing(BinaryVar::Cancer)),
            ],
            1,
        )
        .unwrap();
        let out = impute_missing(&ds, &ids(&ds)).unwrap();
        assert_eq!(out.records()[2].clinical.flag(BinaryVar::Cancer), Some(false));
    }

    #[test]
    fn age_median_then_zscore() {
        let mut missing = ClinicalVariables::complete(1.0);
        missing.age_years = None;
        let ds = Dataset::new(
            vec![
                rec("a", ClinicalVariables::complete(40.0)),
                rec("b", ClinicalVariables::complete(60.0)),
                rec("c", ClinicalVariables::complete(80.0)),
                rec("d", missing),
            ],
            1,
        )
        .unwrap();
        let out = impute_missing(&ds, &ids(&ds)).unwrap();
        assert_eq!(out.records()[3].clinical.age_years, Some(60.0));
        let p = out.age_norm().unwrap();
        // reference ages after imputation: 40, 60, 80, 60
        assert_eq!(p.mean, 60.0);
        assert!((p.std - 200f64.sqrt()).abs() < 1e-12);
        let v = clinical_feature_vector(&out.records()[2], &p).unwrap();
        assert!((v[0] - 20.0 / 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(clinical_feature_vector(&out.records()[3], &p).unwrap()[0], 0.0);
    }

    #[test]
    fn reference_subset_drives_statistics() {
        let ds = Dataset::new(
            vec![
                rec("a", ClinicalVariables::complete(30.0).with(BinaryVar::Male, true)),
                rec("b", ClinicalVariables::complete(50.0).with(BinaryVar::Male, true)),
                rec("c", ClinicalVariables::complete(90.0)),
                rec("d", ClinicalVariables::empty()),
            ],
            1,
        )
        .unwrap();
        let out = impute_missing(&ds, &["a".to_string(), "b".to_string()]).unwrap();
        let d = &out.records()[3].clinical;
        assert_eq!(d.age_years, Some(40.0));
        assert_eq!(d.flag(BinaryVar::Male), Some(true));
        assert_eq!(out.age_norm().unwrap(), NormParams { mean: 40.0, std: 10.0 });
    }

    #[test]
    fn errors() {
        let ds = Dataset::new(
            vec![rec("a", ClinicalVariables::complete(30.0).with_missing(BinaryVar::RrGe30))],
            1,
        )
        .unwrap();
        assert!(matches!(impute_missing(&ds, &[]), Err(DatasetError::EmptyReference)));
        assert!(matches!(
            impute_missing(&ds, &["a".to_string()]),
            Err(DatasetError::AllMissingColumn(c)) if c == "rr_ge_30"
        ));
        assert!(matches!(
            impute_missing(&ds, &["zz".to_string()]),
            Err(DatasetError::UnknownPatientId(_))
        ));
        let p = NormParams { mean: 0.0, std: 1.0 };
        assert!(matches!(clinical_feature_vector(&ds.records()[0], &p), Err(DatasetError::UnimputedRecord(_))));
    }

    #[test]
    fn feature_vector_examples() {
        let p = NormParams { mean: 62.0, std: 12.0 };
        let r = rec("a", ClinicalVariables::complete(62.0));
        assert_eq!(clinical_feature_vector(&r, &p).unwrap(), [0.0; CLINICAL_DIM]);
        let r = rec("b", ClinicalVariables::complete(74.0).with(BinaryVar::Male, true));
        let mut expected = [0.0; CLINICAL_DIM];
        expected[0] = 1.0;
        expected[1] = 1.0;
        assert_eq!(clinical_feature_vector(&r, &p).unwrap(), expected);
        // cohort-like profile: age 70 with cancer and tachycardia against (62, 12)
        let r = rec(
            "c",
            ClinicalVariables::complete(70.0).with(BinaryVar::Cancer, true).with(BinaryVar::HrGe110, true),
        );
        let v = clinical_feature_vector(&r, &p).unwrap();
        assert!((v[0] - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(&v[1..], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_clinical() -> impl Strategy<Value = ClinicalVariables> {
            (
                proptest::option::weighted(0.8, 20.0f64..95.0),
                proptest::collection::vec(proptest::option::weighted(0.8, any::<bool>()), 10),
            )
                .prop_map(|(age, flags)| {
                    let mut c = ClinicalVariables::empty();
                    c.age_years = age;
                    for (v, f) in BinaryVar::ALL.iter().zip(flags) {
                        c.set_flag(*v, f);
                    }
                    c
                })
        }

        proptest! {
            #[test]
            fn imputation_is_idempotent_and_centers_age(
                clin in proptest::collection::vec(arb_clinical(), 12..40)
            ) {
                let mut seeded = clin;
                // guarantee at least one observation per column in the reference
                seeded[0] = ClinicalVariables::complete(50.0);
                seeded[1] = ClinicalVariables::complete(70.0);
                for v in BinaryVar::ALL {
                    seeded[1].set_flag(v, Some(true));
                }
                let records: Vec<PatientRecord> = seeded
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| rec(&format!("p{i}"), c))
                    .collect();
                let ds = Dataset::new(records, 1).unwrap();
                let reference: Vec<String> = ds.ids().into_iter().take(8).collect();
                let once = impute_missing(&ds, &reference).unwrap();
                let twice = impute_missing(&once, &reference).unwrap();
                prop_assert_eq!(&once, &twice);
                prop_assert!(once.records().iter().all(|r| r.clinical.is_complete()));

                let train = once.subset(&once.indices_of(&reference).unwrap());
                let m = train.clinical_matrix().unwrap();
                let col0_mean = m.column(0).sum() / m.nrows() as f64;
                prop_assert!(col0_mean.abs() < 1e-9);
            }
        }
    }
}
