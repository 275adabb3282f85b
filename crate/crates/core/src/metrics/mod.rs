//! Agreement and accuracy statistics.

mod accuracy;
mod agreement;
mod confusion;
mod divergence;
mod kappa;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::AnnotationOutcome;

pub use accuracy::{
    binary_accuracy, subgroup_accuracy, weighted_accuracy, weighted_score, BinaryAccuracy,
    SubgroupAccuracy, WeightedAccuracy,
};
pub use agreement::{agreement_summary, AgreementSummary, KappaCell};
pub use confusion::{confusion, ConfusionMatrix};
pub use divergence::{
    avg_squared_js, expert_distribution, js_divergence, JsAverage, JsReference, LabelDistribution,
};
pub use kappa::{cohen_kappa, fleiss_kappa, RatingMatrix};

/// Model outcomes keyed by track id.
pub type Predictions = BTreeMap<String, AnnotationOutcome>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("no prediction for track `{0}`")]
    MissingPrediction(String),
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("kappa undefined: both raters use a single category but disagree")]
    DegenerateMarginals,
    #[error("row {row} has {raters} rating(s); at least 2 are required")]
    TooFewRatings { row: usize, raters: u32 },
    #[error("row {row} has {found} categories, expected {expected}")]
    RaggedMatrix {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("distribution is not normalized: {0:?}")]
    NotNormalized(Vec<f64>),
    #[error("annotator `{0}` is not in the annotation set")]
    UnknownAnnotator(String),
    #[error("track `{track_id}`: annotator `{annotator_id}` has no label")]
    Unlabeled {
        track_id: String,
        annotator_id: String,
    },
}

/// Neumaier-compensated sum, so reductions do not depend on summation order
/// beyond rounding of the final result.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
