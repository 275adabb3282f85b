use num_rational::Rational64;
use serde::Serialize;

use super::{MetricsError, Predictions};
use crate::consensus::{ConsensusLevel, GoldStandard};
use crate::corpus::{AnnotationOutcome, EmotionLabel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryAccuracy {
    pub matches: usize,
    /// High-confidence samples evaluated.
    pub total: usize,
    /// Samples whose prediction was NOT_ENOUGH_INFO.
    pub nei: usize,
    /// Samples with no prediction at all.
    pub failed: usize,
    pub value: f64,
}

/// Exact-match rate against the majority label over high-confidence golds.
/// NEI and missing predictions count as misses.
pub fn binary_accuracy(
    golds: &[GoldStandard],
    predictions: &Predictions,
) -> Result<BinaryAccuracy, MetricsError> {
    let (mut matches, mut total, mut nei, mut failed) = (0, 0, 0, 0);
    for g in golds.iter().filter(|g| g.level.is_high_confidence()) {
        total += 1;
        match predictions.get(&g.track_id) {
            Some(AnnotationOutcome::Labeled(l)) if Some(*l) == g.majority => matches += 1,
            Some(AnnotationOutcome::Labeled(_)) => {}
            Some(AnnotationOutcome::NotEnoughInformation) => nei += 1,
            None => failed += 1,
        }
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(BinaryAccuracy {
        matches,
        total,
        nei,
        failed,
        value: matches as f64 / total as f64,
    })
}

/// Credit for one prediction: Full 1 on match; Partial 1 for the majority,
/// 1/2 for the minority; None 1/k when any expert chose it. NEI scores 0.
pub fn weighted_score(gold: &GoldStandard, prediction: AnnotationOutcome) -> Rational64 {
    let AnnotationOutcome::Labeled(pred) = prediction else {
        return Rational64::from_integer(0);
    };
    let hit = |l: Option<EmotionLabel>| l == Some(pred);
    match gold.level {
        ConsensusLevel::Full if hit(gold.majority) => Rational64::from_integer(1),
        ConsensusLevel::Partial if hit(gold.majority) => Rational64::from_integer(1),
        ConsensusLevel::Partial if hit(gold.minority) => Rational64::new(1, 2),
        ConsensusLevel::None if gold.expert_labels.values().any(|&l| l == pred) => {
            Rational64::new(1, gold.rater_count().max(1) as i64)
        }
        _ => Rational64::from_integer(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedAccuracy {
    #[serde(serialize_with = "ser_ratio")]
    pub score_sum: Rational64,
    pub total: usize,
    pub nei: usize,
    pub value: f64,
}

fn ser_ratio<S: serde::Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

/// Mean credit over every gold passed in.
pub fn weighted_accuracy(
    golds: &[GoldStandard],
    predictions: &Predictions,
) -> Result<WeightedAccuracy, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = Rational64::from_integer(0);
    let mut nei = 0;
    for g in golds {
        let pred = *predictions
            .get(&g.track_id)
            .ok_or_else(|| MetricsError::MissingPrediction(g.track_id.clone()))?;
        if !pred.is_labeled() {
            nei += 1;
        }
        sum += weighted_score(g, pred);
    }
    let mean = sum / Rational64::from_integer(golds.len() as i64);
    Ok(WeightedAccuracy {
        score_sum: sum,
        total: golds.len(),
        nei,
        value: *mean.numer() as f64 / *mean.denom() as f64,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SubgroupAccuracy {
    pub full_total: usize,
    pub full_matches: usize,
    pub partial_total: usize,
    pub partial_majority: usize,
    pub partial_minority: usize,
    pub partial_neither: usize,
    pub none_total: usize,
    /// None-level samples whose prediction equals some expert's label.
    pub none_any_expert: usize,
}

impl SubgroupAccuracy {
    pub fn full_rate(&self) -> f64 {
        ratio(self.full_matches, self.full_total)
    }

    pub fn partial_majority_rate(&self) -> f64 {
        ratio(self.partial_majority, self.partial_total)
    }

    pub fn partial_minority_rate(&self) -> f64 {
        ratio(self.partial_minority, self.partial_total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Match counts per consensus level. Missing or NEI predictions count as
/// "neither" in the Partial group and as misses elsewhere.
pub fn subgroup_accuracy(golds: &[GoldStandard], predictions: &Predictions) -> SubgroupAccuracy {
    let mut s = SubgroupAccuracy::default();
    for g in golds {
        let pred = predictions.get(&g.track_id).and_then(|o| o.label());
        match g.level {
            ConsensusLevel::Full => {
                s.full_total += 1;
                s.full_matches += usize::from(pred.is_some() && pred == g.majority);
            }
            ConsensusLevel::Partial => {
                s.partial_total += 1;
                if pred.is_some() && pred == g.majority {
                    s.partial_majority += 1;
                } else if pred.is_some() && pred == g.minority {
                    s.partial_minority += 1;
                } else {
                    s.partial_neither += 1;
                }
            }
            ConsensusLevel::None => {
                s.none_total += 1;
                s.none_any_expert +=
                    usize::from(pred.is_some_and(|p| g.expert_labels.values().any(|&l| l == p)));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::classify;
    use EmotionLabel::*;

    pub(crate) fn gold(id: &str, labels: [EmotionLabel; 3]) -> GoldStandard {
        let (level, majority, minority, _) = classify(&labels);
        GoldStandard {
            track_id: id.into(),
            level,
            majority,
            minority,
            non_majority: None,
            expert_labels: ["h1", "h2", "h3"]
                .iter()
                .map(|s| s.to_string())
                .zip(labels)
                .collect(),
        }
    }

    fn preds(p: &[(&str, EmotionLabel)]) -> Predictions {
        p.iter()
            .map(|(t, l)| (t.to_string(), AnnotationOutcome::Labeled(*l)))
            .collect()
    }

    #[test]
    fn score_examples() {
        let r = |n, d| Rational64::new(n, d);
        assert_eq!(weighted_score(&gold("a", [Hvha; 3]), Hvha.into()), r(1, 1));
        let partial = gold("b", [Lvla, Lvla, Hvla]);
        assert_eq!(weighted_score(&partial, Lvla.into()), r(1, 1));
        assert_eq!(weighted_score(&partial, Hvla.into()), r(1, 2));
        assert_eq!(weighted_score(&partial, Hvha.into()), r(0, 1));
        let none = gold("c", [Hvha, Hvla, Lvha]);
        assert_eq!(weighted_score(&none, Lvha.into()), r(1, 3));
        assert_eq!(weighted_score(&none, Lvla.into()), r(0, 1));
        assert_eq!(
            weighted_score(&none, AnnotationOutcome::NotEnoughInformation),
            r(0, 1)
        );
    }

    #[test]
    fn weighted_accuracy_four_samples() {
        let golds = [
            gold("a", [Hvha; 3]),
            gold("b", [Lvha; 3]),
            gold("c", [Lvla, Lvla, Hvla]),
            gold("d", [Hvha, Hvla, Lvha]),
        ];
        let p = preds(&[("a", Hvha), ("b", Hvha), ("c", Hvla), ("d", Lvha)]);
        let w = weighted_accuracy(&golds, &p).unwrap();
        // (1 + 0 + 1/2 + 1/3) / 4 = 11/24
        assert_eq!(w.score_sum, Rational64::new(11, 6));
        assert!((w.value - 0.458_333_333_333_333_3).abs() < 1e-12);
        assert!(matches!(
            weighted_accuracy(&golds, &preds(&[("a", Hvha)])),
            Err(MetricsError::MissingPrediction(_))
        ));
    }

    #[test]
    fn binary_accuracy_examples() {
        let golds = [
            gold("a", [Hvha; 3]),
            gold("b", [Lvha; 3]),
            gold("c", [Lvla; 3]),
        ];
        let acc =
            binary_accuracy(&golds, &preds(&[("a", Hvha), ("b", Hvha), ("c", Hvha)])).unwrap();
        assert_eq!((acc.matches, acc.total), (1, 3));
        assert!((acc.value - 1.0 / 3.0).abs() < 1e-12);

        let mut p = preds(&[("a", Hvha), ("b", Lvha)]);
        p.insert("c".into(), AnnotationOutcome::NotEnoughInformation);
        let acc = binary_accuracy(&golds, &p).unwrap();
        assert_eq!((acc.matches, acc.nei, acc.failed), (2, 1, 0));

        let none_only = [gold("x", [Hvha, Hvla, Lvha])];
        assert_eq!(binary_accuracy(&none_only, &p), Err(MetricsError::Empty));
    }

    #[test]
    fn subgroup_minority_predictor() {
        let golds: Vec<_> = (0..5)
            .map(|i| gold(&format!("t{i}"), [Lvla, Lvla, Hvla]))
            .collect();
        let p: Predictions = golds
            .iter()
            .map(|g| (g.track_id.clone(), Hvla.into()))
            .collect();
        let s = subgroup_accuracy(&golds, &p);
        assert_eq!(s.partial_minority, 5);
        assert_eq!(s.partial_majority, 0);
        assert_eq!(s.partial_minority_rate(), 1.0);
    }

    #[test]
    fn binary_equals_weighted_when_all_full() {
        let golds: Vec<_> = (0..40)
            .map(|i| gold(&format!("t{i:02}"), [EmotionLabel::ALL[i % 4]; 3]))
            .collect();
        let p: Predictions = golds
            .iter()
            .enumerate()
            .map(|(i, g)| (g.track_id.clone(), EmotionLabel::ALL[(i / 3) % 4].into()))
            .collect();
        let b = binary_accuracy(&golds, &p).unwrap();
        let w = weighted_accuracy(&golds, &p).unwrap();
        assert_eq!(b.value, w.value);
    }
}
