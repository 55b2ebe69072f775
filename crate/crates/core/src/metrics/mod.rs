//! Evaluation statistics: concordance, bootstrap intervals, Kaplan-Meier,
//! log-rank, net reclassification and the Wilcoxon signed-rank test.

mod bootstrap;
mod concordance;
mod km;
mod logrank;
mod nri;
mod wilcoxon;

pub use bootstrap::{
    bootstrap_ci, bootstrap_statistics, percentile_interval, resample_indices, ConfidenceInterval, MAX_REDRAWS,
    MIN_RESAMPLES,
};
pub use concordance::{c_index, concordance_counts, ConcordanceCounts};
pub use km::{km_curve, KmCurve, KmPoint};
pub use logrank::{logrank_components, logrank_test, LogrankComponents};
pub use nri::{nri, sigmoid, NriResult, DEFAULT_NRI_THRESHOLD};
pub use wilcoxon::{wilcoxon_signed_rank, EXACT_MAX_N, MIN_NONZERO_PAIRS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite score")]
    NonFiniteInput,
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("bootstrap needs at least {min} resamples, got {got}")]
    TooFewResamples { got: usize, min: usize },
    #[error("could not draw a usable bootstrap resample")]
    DegenerateResampling,
    #[error("group is empty")]
    EmptyGroup,
    #[error("no events")]
    NoEvents,
    #[error("no non-events")]
    NoNonevents,
    #[error("need at least {min} nonzero differences, got {got}")]
    TooFewPairs { got: usize, min: usize },
}

impl MetricsError {
    /// Errors caused by an unlucky resample rather than by bad input.
    pub fn is_resample_degenerate(&self) -> bool {
        matches!(
            self,
            MetricsError::NoComparablePairs
                | MetricsError::NoEvents
                | MetricsError::NoNonevents
                | MetricsError::EmptyGroup
                | MetricsError::TooFewPairs { .. }
        )
    }
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
}

/// Two-sided significance level used throughout the reports.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

impl TestResult {
    pub fn is_significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(MetricsError::DimensionMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}
