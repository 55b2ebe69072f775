use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

pub const HU_MIN: f64 = -1000.0;
pub const HU_MAX: f64 = 900.0;

/// One scored window or acquisition with its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub pe_probability: f64,
    pub features: Vec<f64>,
}

/// Picks the acquisition with the highest PE probability; ties go to the
/// earliest entry.
pub fn aggregate_acquisitions(windows: &[Acquisition]) -> Result<&Acquisition> {
    let first = windows.first().ok_or(DatasetError::EmptyWindowList)?;
    let dim = first.features.len();
    let mut best = first;
    for w in &windows[1..] {
        if w.features.len() != dim {
            return Err(DatasetError::InconsistentDimension { expected: dim, found: w.features.len() });
        }
        if w.pe_probability > best.pe_probability {
            best = w;
        }
    }
    Ok(best)
}

/// Clips Hounsfield units to `[HU_MIN, HU_MAX]` and subtracts the mean of the
/// clipped values.
pub fn normalize_volume(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(DatasetError::EmptyArray);
    }
    let clipped: Vec<f64> = values.iter().map(|v| v.clamp(HU_MIN, HU_MAX)).collect();
    let mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
    Ok(clipped.into_iter().map(|v| v - mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acq(p: f64, tag: f64) -> Acquisition {
        Acquisition { pe_probability: p, features: vec![tag, tag] }
    }

    #[test]
    fn argmax_and_ties() {
        let single = [acq(0.3, 1.0)];
        assert_eq!(aggregate_acquisitions(&single).unwrap().features[0], 1.0);
        let w = [acq(0.2, 0.0), acq(0.9, 1.0), acq(0.5, 2.0)];
        assert_eq!(aggregate_acquisitions(&w).unwrap().features[0], 1.0);
        let tie = [acq(0.7, 0.0), acq(0.7, 1.0)];
        assert_eq!(aggregate_acquisitions(&tie).unwrap().features[0], 0.0);
    }

    #[test]
    fn aggregation_errors() {
        assert!(matches!(aggregate_acquisitions(&[]), Err(DatasetError::EmptyWindowList)));
        let bad = [acq(0.1, 0.0), Acquisition { pe_probability: 0.2, features: vec![1.0] }];
        assert!(matches!(aggregate_acquisitions(&bad), Err(DatasetError::InconsistentDimension { .. })));
    }

    #[test]
    fn volume_examples() {
        let out = normalize_volume(&[-2000.0, 0.0, 1000.0]).unwrap();
        // clipped {-1000, 0, 900} has mean -100/3
        let mean = -100.0 / 3.0;
        let expected = [-1000.0 - mean, -mean, 900.0 - mean];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-9);
        }
        assert_eq!(normalize_volume(&[50.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(normalize_volume(&[-1000.0, 900.0]).unwrap(), vec![-950.0, 950.0]);
        assert!(matches!(normalize_volume(&[]), Err(DatasetError::EmptyArray)));
    }

    proptest! {
        #[test]
        fn aggregated_probability_is_maximal(probs in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let w: Vec<Acquisition> = probs.iter().map(|&p| acq(p, 0.0)).collect();
            let best = aggregate_acquisitions(&w).unwrap();
            prop_assert!(probs.iter().all(|&p| best.pe_probability >= p));
        }

        #[test]
        fn normalized_volume_is_centered(values in proptest::collection::vec(-3000.0f64..3000.0, 1..200)) {
            let out = normalize_volume(&values).unwrap();
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}
