use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Result};
use crate::rng;

pub const MIN_SPLIT_SIZE: usize = 10;

/// Train/validation/test fractions; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DatasetError::InvalidRatios(format!("negative or non-finite ratio in {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(format!("ratios sum to {sum}, expected 1")));
        }
        if self.train <= 0.0 {
            return Err(DatasetError::InvalidRatios("train ratio must be positive".into()));
        }
        Ok(())
    }

    /// Floor for train and validation, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon keeps exact products such as 0.7 * 10 from flooring to 6
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<SplitAssignment> {
    split_dataset_with(ds, SplitRatios::default(), seed)
}

/// Uniformly random partition under `seed` (ChaCha8 Fisher-Yates).
pub fn split_dataset_with(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    let n = ds.len();
    if n < MIN_SPLIT_SIZE {
        return Err(DatasetError::DatasetTooSmall { n, min: MIN_SPLIT_SIZE });
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let (n_train, n_val, _) = ratios.sizes(n);
    let ids = |idx: &[usize]| idx.iter().map(|&i| ds.records()[i].patient_id.clone()).collect();
    Ok(SplitAssignment {
        train_ids: ids(&order[..n_train]),
        val_ids: ids(&order[n_train..n_train + n_val]),
        test_ids: ids(&order[n_train + n_val..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClinicalVariables, PatientRecord, SurvivalLabel};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn cohort(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| PatientRecord::new(format!("p{i}"), ClinicalVariables::complete(50.0), SurvivalLabel::censored(1.0)))
            .collect();
        Dataset::new(records, 1).unwrap()
    }

    #[test]
    fn sizes_follow_floor_rule() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(10), (7, 1, 2));
        assert_eq!(r.sizes(485), (339, 48, 98));
        assert_eq!(r.sizes(1000), (700, 100, 200));
        let s = split_dataset(&cohort(485), 1).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (339, 48, 98));
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = cohort(50);
        assert_eq!(split_dataset(&ds, 9).unwrap(), split_dataset(&ds, 9).unwrap());
        assert_ne!(split_dataset(&ds, 9).unwrap(), split_dataset(&ds, 10).unwrap());
    }

    #[test]
    fn too_small_and_bad_ratios() {
        assert!(matches!(split_dataset(&cohort(9), 0), Err(DatasetError::DatasetTooSmall { n: 9, .. })));
        let bad = SplitRatios { train: 0.7, val: 0.2, test: 0.2 };
        assert!(matches!(split_dataset_with(&cohort(20), bad, 0), Err(DatasetError::InvalidRatios(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn split_is_partition(n in 10usize..300, seed in any::<u64>()) {
            let ds = cohort(n);
            let s = split_dataset(&ds, seed).unwrap();
            let all: HashSet<&String> = s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids).collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(s.train_ids.len() + s.val_ids.len() + s.test_ids.len(), n);
            prop_assert_eq!(s.train_ids.len(), n * 7 / 10);
            prop_assert_eq!(s.val_ids.len(), n / 10);
        }
    }
}
