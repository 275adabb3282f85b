use std::collections::HashMap;

use serde::Serialize;

use super::{cohen_kappa, fleiss_kappa, MetricsError, RatingMatrix};
use crate::consensus::GoldStandard;
use crate::corpus::{AnnotationSet, EmotionLabel};

/// A kappa value with the sample count behind it; `None` renders as N.A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaCell {
    pub value: Option<f64>,
    pub n: usize,
}

impl KappaCell {
    pub const NA: KappaCell = KappaCell { value: None, n: 0 };

    fn of(value: f64, n: usize) -> Self {
        Self {
            value: Some(value),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementSummary {
    /// Humans in roster order, then the model if any.
    pub annotators: Vec<String>,
    pub model: Option<String>,
    /// Symmetric pairwise Cohen's kappa; the diagonal is N.A.
    pub pairwise: Vec<Vec<KappaCell>>,
    /// Each annotator against the gold majority over high-confidence tracks.
    pub vs_gold: Vec<KappaCell>,
    pub fleiss_humans: KappaCell,
    pub fleiss_with_model: Option<KappaCell>,
    pub mean_human_pairwise: KappaCell,
    pub mean_model_human: Option<KappaCell>,
}

fn labels_of(set: &AnnotationSet, rater: usize) -> Result<Vec<EmotionLabel>, MetricsError> {
    set.tracks()
        .iter()
        .zip(set.rows())
        .map(|(t, row)| {
            row[rater].label().ok_or_else(|| MetricsError::Unlabeled {
                track_id: t.clone(),
                annotator_id: set.roster()[rater].clone(),
            })
        })
        .collect()
}

fn mean(cells: &[KappaCell]) -> KappaCell {
    let vals: Vec<f64> = cells.iter().filter_map(|c| c.value).collect();
    if vals.is_empty() {
        return KappaCell::NA;
    }
    KappaCell::of(
        super::compensated_sum(vals.iter().copied()) / vals.len() as f64,
        cells.iter().map(|c| c.n).min().unwrap_or(0),
    )
}

/// Kappa tables over `set`, whose roster holds the human raters and
/// optionally `model`. Every cell of `set` must be labeled.
pub fn agreement_summary(
    set: &AnnotationSet,
    golds: &[GoldStandard],
    model: Option<&str>,
) -> Result<AgreementSummary, MetricsError> {
    if set.is_empty() {
        return Err(MetricsError::Empty);
    }
    let model_idx = match model {
        Some(m) => Some(
            set.rater_index(m)
                .ok_or_else(|| MetricsError::UnknownAnnotator(m.to_string()))?,
        ),
        None => None,
    };
    let mut order: Vec<usize> = (0..set.roster().len())
        .filter(|&i| Some(i) != model_idx)
        .collect();
    let humans = order.len();
    order.extend(model_idx);

    let columns: Vec<Vec<EmotionLabel>> = order
        .iter()
        .map(|&i| labels_of(set, i))
        .collect::<Result<_, _>>()?;
    let n = set.len();
    let k = columns.len();

    let mut pairwise = vec![vec![KappaCell::NA; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let cell = KappaCell::of(cohen_kappa(&columns[a], &columns[b])?, n);
            pairwise[a][b] = cell;
            pairwise[b][a] = cell;
        }
    }

    let gold_by_track: HashMap<&str, EmotionLabel> = golds
        .iter()
        .filter(|g| g.level.is_high_confidence())
        .filter_map(|g| g.majority.map(|m| (g.track_id.as_str(), m)))
        .collect();
    let rows: Vec<(usize, EmotionLabel)> = set
        .tracks()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| gold_by_track.get(t.as_str()).map(|&g| (i, g)))
        .collect();
    let gold_seq: Vec<EmotionLabel> = rows.iter().map(|&(_, g)| g).collect();
    let vs_gold = columns
        .iter()
        .map(|col| {
            if rows.is_empty() {
                return Ok(KappaCell::NA);
            }
            let seq: Vec<EmotionLabel> = rows.iter().map(|&(i, _)| col[i]).collect();
            Ok(KappaCell::of(cohen_kappa(&seq, &gold_seq)?, rows.len()))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let matrix_of = |cols: &[Vec<EmotionLabel>]| {
        let items: Vec<Vec<EmotionLabel>> = (0..n)
            .map(|t| cols.iter().map(|c| c[t]).collect())
            .collect();
        RatingMatrix::from_labels(items.iter().map(Vec::as_slice))
    };
    let fleiss_humans = if humans >= 2 {
        KappaCell::of(fleiss_kappa(&matrix_of(&columns[..humans]))?, n)
    } else {
        KappaCell::NA
    };
    let fleiss_with_model = match model_idx {
        Some(_) => Some(KappaCell::of(fleiss_kappa(&matrix_of(&columns))?, n)),
        None => None,
    };

    let human_pairs: Vec<KappaCell> = (0..humans)
        .flat_map(|a| (a + 1..humans).map(move |b| (a, b)))
        .map(|(a, b)| pairwise[a][b])
        .collect();
    let mean_model_human = model_idx.map(|_| mean(&pairwise[humans][..humans]));

    Ok(AgreementSummary {
        annotators: order.iter().map(|&i| set.roster()[i].clone()).collect(),
        model: model.map(str::to_string),
        mean_human_pairwise: mean(&human_pairs),
        pairwise,
        vs_gold,
        fleiss_humans,
        fleiss_with_model,
        mean_model_human,
    })
}
