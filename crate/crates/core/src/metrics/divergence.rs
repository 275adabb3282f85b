use serde::{Deserialize, Serialize};

use super::{compensated_sum, MetricsError, Predictions};
use crate::consensus::GoldStandard;
use crate::corpus::EmotionLabel;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Probabilities over the four quadrants, in quadrant order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelDistribution([f64; 4]);

impl LabelDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self, MetricsError> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !x.is_finite() || *x < 0.0)
            || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE
        {
            return Err(MetricsError::NotNormalized(p.to_vec()));
        }
        Ok(Self(p))
    }

    pub fn one_hot(label: EmotionLabel) -> Self {
        let mut p = [0.0; 4];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn from_counts(counts: [u32; 4]) -> Result<Self, MetricsError> {
        let n: u32 = counts.iter().sum();
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        Ok(Self(counts.map(|c| f64::from(c) / f64::from(n))))
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }
}

/// Relative frequency of each quadrant among the gold's expert labels.
pub fn expert_distribution(gold: &GoldStandard) -> Result<LabelDistribution, MetricsError> {
    LabelDistribution::from_counts(gold.counts())
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    let half_kl = |a: f64, m: f64| {
        if a > 0.0 {
            0.5 * a * (a / m).log2()
        } else {
            0.0
        }
    };
    let terms = p.0.iter().zip(&q.0).map(|(&a, &b)| {
        let m = 0.5 * (a + b);
        half_kl(a, m) + half_kl(b, m)
    });
    compensated_sum(terms).clamp(0.0, 1.0)
}

/// What the model's one-hot prediction is compared against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsReference {
    /// Relative frequencies of all expert labels.
    Aggregated,
    /// One expert's label as a one-hot distribution.
    Annotator(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JsAverage {
    pub reference: JsReference,
    pub mean: f64,
    pub n: usize,
    /// Samples skipped because the prediction was NEI or missing.
    pub excluded: usize,
}

/// Mean divergence between the reference distribution and the one-hot
/// prediction over all golds with a labeled prediction.
pub fn avg_squared_js(
    golds: &[GoldStandard],
    predictions: &Predictions,
    reference: &JsReference,
) -> Result<JsAverage, MetricsError> {
    let mut values = Vec::with_capacity(golds.len());
    let mut excluded = 0;
    for g in golds {
        let Some(pred) = predictions.get(&g.track_id).and_then(|o| o.label()) else {
            excluded += 1;
            continue;
        };
        let p = match reference {
            JsReference::Aggregated => expert_distribution(g)?,
            JsReference::Annotator(id) => LabelDistribution::one_hot(
                *g.expert_labels
                    .get(id)
                    .ok_or_else(|| MetricsError::UnknownAnnotator(id.clone()))?,
            ),
        };
        values.push(js_divergence(&p, &LabelDistribution::one_hot(pred)));
    }
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len();
    Ok(JsAverage {
        reference: reference.clone(),
        mean: compensated_sum(values) / n as f64,
        n,
        excluded,
    })
}
