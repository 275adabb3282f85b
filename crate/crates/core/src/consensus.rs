//! Majority-vote gold standard over a human rater roster.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotationOutcome, AnnotationSet, EmotionLabel};

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("roster needs an odd number of at least 3 raters, got {0}")]
    RosterSize(usize),
    #[error("model annotator `{0}` is in the gold roster")]
    ModelInRoster(String),
    #[error("track `{track_id}`: rater `{annotator_id}` gave NOT_ENOUGH_INFO")]
    HumanNei {
        track_id: String,
        annotator_id: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConsensusLevel {
    /// Every rater agrees.
    Full,
    /// A strict majority agrees.
    Partial,
    /// No strict majority.
    None,
}

impl ConsensusLevel {
    pub const ALL: [ConsensusLevel; 3] = [Self::Full, Self::Partial, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "FULL",
            Self::Partial => "PARTIAL",
            Self::None => "NONE",
        }
    }

    pub fn is_high_confidence(self) -> bool {
        self != Self::None
    }
}

impl fmt::Display for ConsensusLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldStandard {
    pub track_id: String,
    pub level: ConsensusLevel,
    pub majority: Option<EmotionLabel>,
    /// For Partial: the most frequent non-majority label when unique.
    pub minority: Option<EmotionLabel>,
    /// Every non-majority label, sorted; only kept for rosters larger than 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_majority: Option<Vec<EmotionLabel>>,
    pub expert_labels: BTreeMap<String, EmotionLabel>,
}

impl GoldStandard {
    pub fn rater_count(&self) -> usize {
        self.expert_labels.len()
    }

    /// Per-category rater counts in quadrant order.
    pub fn counts(&self) -> [u32; 4] {
        let mut c = [0; 4];
        for l in self.expert_labels.values() {
            c[l.index()] += 1;
        }
        c
    }
}

/// Consensus of one label multiset: level, majority, minority and the sorted
/// non-majority labels.
pub fn classify(
    labels: &[EmotionLabel],
) -> (
    ConsensusLevel,
    Option<EmotionLabel>,
    Option<EmotionLabel>,
    Vec<EmotionLabel>,
) {
    let mut counts = [0usize; 4];
    for l in labels {
        counts[l.index()] += 1;
    }
    let k = labels.len();
    let top = (0..4)
        .max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))
        .unwrap();
    if counts[top] == k {
        return (
            ConsensusLevel::Full,
            Some(EmotionLabel::ALL[top]),
            None,
            Vec::new(),
        );
    }
    if 2 * counts[top] <= k {
        return (ConsensusLevel::None, None, None, Vec::new());
    }
    let mut rest: Vec<EmotionLabel> = labels
        .iter()
        .copied()
        .filter(|l| l.index() != top)
        .collect();
    rest.sort();
    let best = rest.iter().map(|l| counts[l.index()]).max().unwrap_or(0);
    let leaders: Vec<usize> = (0..4).filter(|&i| i != top && counts[i] == best).collect();
    let minority = (leaders.len() == 1).then(|| EmotionLabel::ALL[leaders[0]]);
    (
        ConsensusLevel::Partial,
        Some(EmotionLabel::ALL[top]),
        minority,
        rest,
    )
}

/// One gold record per track of `set`, whose roster must be human raters only.
pub fn gold_standard(
    set: &AnnotationSet,
    model_ids: &[String],
) -> Result<Vec<GoldStandard>, ConsensusError> {
    let roster = set.roster();
    if roster.len() < 3 || roster.len() % 2 == 0 {
        return Err(ConsensusError::RosterSize(roster.len()));
    }
    if let Some(m) = roster.iter().find(|r| model_ids.contains(r)) {
        return Err(ConsensusError::ModelInRoster(m.clone()));
    }
    set.tracks()
        .iter()
        .zip(set.rows())
        .map(|(track, row)| {
            let mut labels = Vec::with_capacity(row.len());
            for (rater, outcome) in roster.iter().zip(row) {
                match outcome {
                    AnnotationOutcome::Labeled(l) => labels.push(*l),
                    AnnotationOutcome::NotEnoughInformation => {
                        return Err(ConsensusError::HumanNei {
                            track_id: track.clone(),
                            annotator_id: rater.clone(),
                        })
                    }
                }
            }
            let (level, majority, minority, rest) = classify(&labels);
            Ok(GoldStandard {
                track_id: track.clone(),
                level,
                majority,
                minority,
                non_majority: (labels.len() > 3 && level == ConsensusLevel::Partial)
                    .then_some(rest),
                expert_labels: roster.iter().cloned().zip(labels).collect(),
            })
        })
        .collect()
}

/// Splits golds into high-confidence (Full, Partial) and low-confidence (None).
pub fn partition_confidence(golds: &[GoldStandard]) -> (Vec<GoldStandard>, Vec<GoldStandard>) {
    golds
        .iter()
        .cloned()
        .partition(|g| g.level.is_high_confidence())
}

pub fn level_counts(golds: &[GoldStandard]) -> BTreeMap<ConsensusLevel, usize> {
    let mut m: BTreeMap<ConsensusLevel, usize> =
        ConsensusLevel::ALL.iter().map(|&l| (l, 0)).collect();
    for g in golds {
        *m.get_mut(&g.level).unwrap() += 1;
    }
    m
}

pub fn write_gold<W: Write>(mut w: W, golds: &[GoldStandard]) -> std::io::Result<()> {
    for g in golds {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_gold(path: &Path, golds: &[GoldStandard]) -> Result<(), ConsensusError> {
    let io = |source| ConsensusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_gold(&mut buf, golds).map_err(io)?;
    std::fs::write(path, buf).map_err(io)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldStandard>, ConsensusError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConsensusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ConsensusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EmotionLabel::*;

    fn set_of(rows: &[[EmotionLabel; 3]]) -> AnnotationSet {
        AnnotationSet::from_rows(
            vec!["h1".into(), "h2".into(), "h3".into()],
            (0..rows.len()).map(|i| format!("t{i}")).collect(),
            rows.iter()
                .map(|r| r.iter().map(|&l| l.into()).collect())
                .collect(),
        )
    }

    #[test]
    fn examples() {
        let g = gold_standard(
            &set_of(&[[Hvha, Hvha, Hvha], [Lvla, Lvla, Hvla], [Hvha, Hvla, Lvha]]),
            &[],
        )
        .unwrap();
        assert_eq!(
            (g[0].level, g[0].majority, g[0].minority),
            (ConsensusLevel::Full, Some(Hvha), None)
        );
        assert_eq!(
            (g[1].level, g[1].majority, g[1].minority),
            (ConsensusLevel::Partial, Some(Lvla), Some(Hvla))
        );
        assert_eq!(
            (g[2].level, g[2].majority, g[2].minority),
            (ConsensusLevel::None, None, None)
        );
        assert_eq!(g[1].non_majority, None);
    }

    #[test]
    fn partition_counts() {
        let mut rows = vec![[Hvha, Hvha, Hvha]; 386];
        rows.extend(vec![[Hvha, Hvla, Lvha]; 14]);
        let golds = gold_standard(&set_of(&rows), &[]).unwrap();
        let (high, low) = partition_confidence(&golds);
        assert_eq!((high.len(), low.len()), (386, 14));
        let (high, low) = partition_confidence(&golds[..386]);
        assert_eq!((high.len(), low.len()), (386, 0));
        let (high, low) = partition_confidence(&[]);
        assert!(high.is_empty() && low.is_empty());
    }

    #[test]
    fn roster_validation() {
        let s = set_of(&[[Hvha, Hvha, Hvha]]);
        assert!(matches!(
            gold_standard(&s, &["h2".to_string()]),
            Err(ConsensusError::ModelInRoster(m)) if m == "h2"
        ));
        let two = s.select_raters(&["h1", "h2"]).unwrap();
        assert!(matches!(
            gold_standard(&two, &[]),
            Err(ConsensusError::RosterSize(2))
        ));
        let nei = AnnotationSet::from_rows(
            vec!["h1".into(), "h2".into(), "h3".into()],
            vec!["t".into()],
            vec![vec![
                Hvha.into(),
                AnnotationOutcome::NotEnoughInformation,
                Hvha.into(),
            ]],
        );
        assert!(matches!(
            gold_standard(&nei, &[]),
            Err(ConsensusError::HumanNei { .. })
        ));
    }

    #[test]
    fn five_rater_partial_keeps_non_majority() {
        let (level, maj, min, rest) = classify(&[Hvha, Hvha, Hvha, Lvla, Hvla]);
        assert_eq!(level, ConsensusLevel::Partial);
        assert_eq!(maj, Some(Hvha));
        assert_eq!(min, None);
        assert_eq!(rest, vec![Hvla, Lvla]);
        let (level, _, min, _) = classify(&[Lvha, Lvha, Lvha, Lvla, Lvla]);
        assert_eq!(level, ConsensusLevel::Partial);
        assert_eq!(min, Some(Lvla));
        assert_eq!(
            classify(&[Hvha, Hvha, Lvla, Lvla, Hvla]).0,
            ConsensusLevel::None
        );
    }

    #[test]
    fn gold_jsonl_round_trip() {
        let golds = gold_standard(&set_of(&[[Lvla, Lvla, Hvla], [Hvha, Hvla, Lvha]]), &[]).unwrap();
        let mut buf = Vec::new();
        write_gold(&mut buf, &golds).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            r#"{"track_id":"t0","level":"PARTIAL","majority":"LVLA","minority":"HVLA","expert_labels":{"h1":"LVLA","h2":"LVLA","h3":"HVLA"}}"#
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gold.jsonl");
        save_gold(&p, &golds).unwrap();
        assert_eq!(load_gold(&p).unwrap(), golds);
    }

    fn arb_label() -> impl Strategy<Value = EmotionLabel> {
        (0usize..4).prop_map(|i| EmotionLabel::ALL[i])
    }

    proptest! {
        #[test]
        fn permutation_invariant(a in arb_label(), b in arb_label(), c in arb_label()) {
            let base = classify(&[a, b, c]);
            for p in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                let (l, m, n, _) = classify(&p);
                prop_assert_eq!((l, m, n), (base.0, base.1, base.2));
            }
        }

        #[test]
        fn partition_sums(rows in prop::collection::vec([arb_label(), arb_label(), arb_label()], 0..60)) {
            let golds = gold_standard(&set_of(&rows), &[]).unwrap();
            let (high, low) = partition_confidence(&golds);
            prop_assert_eq!(high.len() + low.len(), golds.len());
            let counts = level_counts(&golds);
            prop_assert_eq!(counts[&ConsensusLevel::Full] + counts[&ConsensusLevel::Partial], high.len());
            for g in &golds {
                if g.level == ConsensusLevel::Partial {
                    prop_assert_ne!(g.majority, g.minority);
                    prop_assert!(g.minority.is_some());
                }
            }
        }
    }
}
