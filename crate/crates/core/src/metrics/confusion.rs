use serde::Serialize;

use super::Predictions;
use crate::consensus::GoldStandard;
use crate::corpus::EmotionLabel;

/// Counts indexed by (gold majority, predicted label), quadrant order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
    /// High-confidence samples left out for a NEI or missing prediction.
    pub excluded: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, gold: EmotionLabel) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    /// Rows divided by their totals; empty rows stay zero and are flagged.
    pub fn normalized(&self) -> ([[f64; 4]; 4], [bool; 4]) {
        let mut out = [[0.0; 4]; 4];
        let mut empty = [false; 4];
        for (i, row) in self.counts.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n == 0 {
                empty[i] = true;
                continue;
            }
            for (j, &c) in row.iter().enumerate() {
                out[i][j] = c as f64 / n as f64;
            }
        }
        (out, empty)
    }
}

/// Gold-majority vs prediction counts over high-confidence golds.
pub fn confusion(golds: &[GoldStandard], predictions: &Predictions) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for g in golds {
        let Some(gold) = g.majority.filter(|_| g.level.is_high_confidence()) else {
            continue;
        };
        match predictions.get(&g.track_id).and_then(|o| o.label()) {
            Some(pred) => m.counts[gold.index()][pred.index()] += 1,
            None => m.excluded += 1,
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::classify;
    use proptest::prelude::*;

    fn gold(id: usize, labels: [EmotionLabel; 3]) -> GoldStandard {
        let (level, majority, minority, _) = classify(&labels);
        GoldStandard {
            track_id: format!("t{id:04}"),
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

    #[test]
    fn perfect_predictor_is_identity() {
        let golds: Vec<_> = (0..8)
            .map(|i| gold(i, [EmotionLabel::ALL[i % 4]; 3]))
            .collect();
        let preds: Predictions = golds
            .iter()
            .map(|g| (g.track_id.clone(), g.majority.unwrap().into()))
            .collect();
        let (norm, empty) = confusion(&golds, &preds).normalized();
        for (i, row) in norm.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(empty, [false; 4]);
    }

    #[test]
    fn row_shares_and_empty_rows() {
        use EmotionLabel::*;
        let golds: Vec<_> = (0..100).map(|i| gold(i, [Hvha; 3])).collect();
        let preds: Predictions = golds
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let p = match i {
                    0..=72 => Hvha,
                    73..=88 => Lvha,
                    89..=94 => Hvla,
                    _ => Lvla,
                };
                (g.track_id.clone(), p.into())
            })
            .collect();
        let m = confusion(&golds, &preds);
        let (norm, empty) = m.normalized();
        assert!((norm[0][0] - 0.73).abs() < 1e-12);
        assert!((norm[0][2] - 0.16).abs() < 1e-12);
        assert_eq!(empty, [false, true, true, true]);
        assert_eq!(norm[1], [0.0; 4]);
    }

    proptest! {
        #[test]
        fn totals_and_row_sums(
            cases in prop::collection::vec((prop::array::uniform3(0usize..4), 0usize..5), 0..80)
        ) {
            let mut golds = Vec::new();
            let mut preds = Predictions::new();
            for (i, (labels, p)) in cases.iter().enumerate() {
                let g = gold(i, labels.map(|l| EmotionLabel::ALL[l]));
                if *p < 4 {
                    preds.insert(g.track_id.clone(), EmotionLabel::ALL[*p].into());
                }
                golds.push(g);
            }
            let m = confusion(&golds, &preds);
            let high = golds.iter().filter(|g| g.level.is_high_confidence()).count();
            prop_assert_eq!(m.total() as usize + m.excluded, high);
            let (norm, empty) = m.normalized();
            for (row, e) in norm.iter().zip(empty) {
                let s: f64 = row.iter().sum();
                let ok = if e { s == 0.0 } else { (s - 1.0).abs() < 1e-12 };
                prop_assert!(ok);
            }
        }
    }
}
