//! Evaluation report: every statistic in one structure, rendered as canonical
//! JSON, per-table CSV files and a plain-text summary.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::annotator::StabilityReport;
use crate::consensus::{self, ConsensusError, ConsensusLevel, GoldStandard};
use crate::corpus::{self, param, AnnotationOutcome, AnnotationRecord, CorpusError, EmotionLabel};
use crate::metrics::{
    self, AgreementSummary, BinaryAccuracy, ConfusionMatrix, JsAverage, JsReference, KappaCell,
    MetricsError, Predictions, SubgroupAccuracy, WeightedAccuracy,
};
use crate::resample::{self, BootstrapResult, BootstrapSpec, ResampleError, RNG_NAME};

pub const TOOL_NAME: &str = "emolabel";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_FILES: [&str; 9] = [
    "table1_accuracy.csv",
    "table2_models.csv",
    "table3_subgroup.csv",
    "table4_pairwise_kappa.csv",
    "table5_kappa_summary.csv",
    "table6_bootstrap.csv",
    "table7_js.csv",
    "confusion_counts.csv",
    "confusion_normalized.csv",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("{block}: {source}")]
    Metric {
        block: &'static str,
        #[source]
        source: MetricsError,
    },
    #[error("{block}: {source}")]
    Resample {
        block: &'static str,
        #[source]
        source: ResampleError,
    },
    #[error("no records for model annotator `{0}` in run {1}")]
    NoModelRecords(String, u32),
    #[error("gold file disagrees with the human annotations: {0}")]
    GoldMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn metric(block: &'static str) -> impl Fn(MetricsError) -> ReportError {
    move |source| ReportError::Metric { block, source }
}

fn boot(block: &'static str) -> impl Fn(ResampleError) -> ReportError {
    move |source| ReportError::Resample { block, source }
}

/// A value with the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub value: Option<f64>,
    pub n: usize,
}

impl Stat {
    fn ratio(num: usize, den: usize) -> Self {
        Self {
            value: (den > 0).then(|| num as f64 / den as f64),
            n: den,
        }
    }
}

impl From<KappaCell> for Stat {
    fn from(c: KappaCell) -> Self {
        Self {
            value: c.value,
            n: c.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetBlock {
    pub tracks: usize,
    pub humans: Vec<String>,
    pub model: String,
    pub consensus: BTreeMap<ConsensusLevel, usize>,
    pub high_confidence: usize,
    pub low_confidence: usize,
    /// Gold majority label counts over high-confidence tracks.
    pub gold_quadrants: BTreeMap<EmotionLabel, usize>,
    /// Model outcome counts; NEI under its own key.
    pub model_outcomes: BTreeMap<String, usize>,
    pub model_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorAccuracy {
    pub annotator: String,
    pub binary: BinaryAccuracy,
    pub weighted_all: WeightedAccuracy,
    pub weighted_high: WeightedAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyBlock {
    pub model: AnnotatorAccuracy,
    pub humans: Vec<AnnotatorAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupRow {
    pub annotator: String,
    pub counts: SubgroupAccuracy,
    pub full_rate: Stat,
    pub partial_majority_rate: Stat,
    pub partial_minority_rate: Stat,
    pub none_any_expert_rate: Stat,
}

impl SubgroupRow {
    fn new(annotator: &str, counts: SubgroupAccuracy) -> Self {
        Self {
            annotator: annotator.to_string(),
            full_rate: Stat::ratio(counts.full_matches, counts.full_total),
            partial_majority_rate: Stat::ratio(counts.partial_majority, counts.partial_total),
            partial_minority_rate: Stat::ratio(counts.partial_minority, counts.partial_total),
            none_any_expert_rate: Stat::ratio(counts.none_any_expert, counts.none_total),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaBlock {
    /// Tracks where every annotator, the model included, gave a label.
    pub tracks: usize,
    pub agreement: AgreementSummary,
    pub model_vs_gold: Stat,
    pub mean_human_vs_gold: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JsBlock {
    pub aggregated: JsAverage,
    pub per_annotator: Vec<JsAverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapBlock {
    /// κ(model, gold) − κ(human, gold), one per human.
    pub pairwise: Vec<BootstrapResult>,
    /// κ_F(humans) − κ_F(humans + model).
    pub fleiss: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionBlock {
    pub labels: [EmotionLabel; 4],
    pub counts: [[u64; 4]; 4],
    /// Row-normalized; rows without samples are null.
    pub normalized: [Option<[f64; 4]>; 4],
    pub total: u64,
    pub excluded: usize,
}

impl From<&ConfusionMatrix> for ConfusionBlock {
    fn from(m: &ConfusionMatrix) -> Self {
        let (norm, empty) = m.normalized();
        let mut normalized = [None; 4];
        for i in 0..4 {
            if !empty[i] {
                normalized[i] = Some(norm[i]);
            }
        }
        Self {
            labels: EmotionLabel::ALL,
            counts: m.counts,
            normalized,
            total: m.total(),
            excluded: m.excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityBlock {
    pub runs: u32,
    pub tracks: usize,
    pub all_identical: usize,
    pub majority_consistent: usize,
    pub fully_inconsistent: usize,
    pub consistency_rate: Stat,
}

impl From<&StabilityReport> for StabilityBlock {
    fn from(s: &StabilityReport) -> Self {
        Self {
            runs: s.runs,
            tracks: s.total,
            all_identical: s.all_identical,
            majority_consistent: s.majority_consistent,
            fully_inconsistent: s.fully_inconsistent,
            consistency_rate: Stat::ratio(s.all_identical, s.total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NotEnoughInformation,
    MissingPrediction,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Exclusion {
    pub track_id: String,
    pub annotator_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub seed: u64,
    pub rng: String,
    pub bootstrap_iterations: usize,
    pub bootstrap_level: f64,
    pub config_hash: Option<String>,
    pub model: String,
    pub run_index: u32,
    pub template_version: Option<String>,
    pub mode: Option<String>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub dataset: DatasetBlock,
    pub accuracy: AccuracyBlock,
    pub subgroup: Vec<SubgroupRow>,
    pub kappa: KappaBlock,
    pub js: JsBlock,
    pub bootstrap: BootstrapBlock,
    pub confusion: ConfusionBlock,
    pub stability: Option<StabilityBlock>,
    pub exclusions: Vec<Exclusion>,
    pub provenance: Provenance,
}

/// Everything [`evaluate`] needs.
#[derive(Debug, Clone)]
pub struct EvaluationInput<'a> {
    /// Human and model records; other annotators are ignored.
    pub records: &'a [AnnotationRecord],
    pub humans: &'a [String],
    pub model: &'a str,
    pub run_index: u32,
    /// Track ids that must all carry human labels; empty skips the check.
    pub expected_tracks: &'a [String],
    /// Previously built gold; checked against a fresh build when given.
    pub gold: Option<&'a [GoldStandard]>,
    pub bootstrap: BootstrapSpec,
    pub stability: Option<&'a StabilityReport>,
    pub config_hash: Option<String>,
}

fn predictions_of(records: &[AnnotationRecord], annotator: &str, run_index: u32) -> Predictions {
    records
        .iter()
        .filter(|r| r.annotator_id == annotator && (!r.is_model() || r.run_index == run_index))
        .map(|r| (r.track_id.clone(), r.outcome))
        .collect()
}

fn annotator_accuracy(
    annotator: &str,
    golds: &[GoldStandard],
    high: &[GoldStandard],
    preds: &Predictions,
) -> Result<AnnotatorAccuracy, ReportError> {
    let covered = |gs: &[GoldStandard]| -> Vec<GoldStandard> {
        gs.iter()
            .filter(|g| preds.contains_key(&g.track_id))
            .cloned()
            .collect()
    };
    Ok(AnnotatorAccuracy {
        annotator: annotator.to_string(),
        binary: metrics::binary_accuracy(golds, preds).map_err(metric("accuracy"))?,
        weighted_all: metrics::weighted_accuracy(&covered(golds), preds)
            .map_err(metric("accuracy"))?,
        weighted_high: metrics::weighted_accuracy(&covered(high), preds)
            .map_err(metric("accuracy"))?,
    })
}

/// Builds the full report for one model against a human roster.
pub fn evaluate(input: &EvaluationInput<'_>) -> Result<EvaluationReport, ReportError> {
    let humans = input.humans;
    let model = input.model;
    let human_set = corpus::build_annotation_set(input.records, humans, 0, true)?;
    if !input.expected_tracks.is_empty() {
        let have: HashSet<&str> = human_set.tracks().iter().map(String::as_str).collect();
        let missing: Vec<(String, String)> = input
            .expected_tracks
            .iter()
            .filter(|t| !have.contains(t.as_str()))
            .flat_map(|t| humans.iter().map(move |h| (t.clone(), h.clone())))
            .collect();
        if !missing.is_empty() {
            return Err(CorpusError::Incomplete(missing).into());
        }
    }
    let golds = consensus::gold_standard(&human_set, &[model.to_string()])?;
    if let Some(given) = input.gold {
        if given != golds.as_slice() {
            let first = given
                .iter()
                .zip(&golds)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.track_id.clone())
                .unwrap_or_else(|| format!("{} vs {} records", given.len(), golds.len()));
            return Err(ReportError::GoldMismatch(first));
        }
    }
    let (high, _) = consensus::partition_confidence(&golds);

    let model_records: Vec<&AnnotationRecord> = input
        .records
        .iter()
        .filter(|r| r.annotator_id == model && r.run_index == input.run_index)
        .collect();
    if model_records.is_empty() {
        return Err(ReportError::NoModelRecords(
            model.to_string(),
            input.run_index,
        ));
    }
    let gold_ids: HashSet<&str> = golds.iter().map(|g| g.track_id.as_str()).collect();
    let preds: Predictions = predictions_of(input.records, model, input.run_index)
        .into_iter()
        .filter(|(t, _)| gold_ids.contains(t.as_str()))
        .collect();

    let mut exclusions = Vec::new();
    for g in &golds {
        let reason = match preds.get(&g.track_id) {
            None => ExclusionReason::MissingPrediction,
            Some(AnnotationOutcome::NotEnoughInformation) => ExclusionReason::NotEnoughInformation,
            Some(_) => continue,
        };
        exclusions.push(Exclusion {
            track_id: g.track_id.clone(),
            annotator_id: model.to_string(),
            reason,
        });
    }

    let levels = consensus::level_counts(&golds);
    let mut gold_quadrants: BTreeMap<EmotionLabel, usize> =
        EmotionLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for g in &high {
        if let Some(m) = g.majority {
            *gold_quadrants.get_mut(&m).expect("all quadrants present") += 1;
        }
    }
    let mut model_outcomes: BTreeMap<String, usize> = EmotionLabel::ALL
        .iter()
        .map(|l| (l.code().to_string(), 0))
        .chain([(AnnotationOutcome::NEI_TOKEN.to_string(), 0)])
        .collect();
    for o in preds.values() {
        let key = match o {
            AnnotationOutcome::Labeled(l) => l.code(),
            AnnotationOutcome::NotEnoughInformation => AnnotationOutcome::NEI_TOKEN,
        };
        *model_outcomes.get_mut(key).expect("key present") += 1;
    }
    let dataset = DatasetBlock {
        tracks: golds.len(),
        humans: humans.to_vec(),
        model: model.to_string(),
        high_confidence: high.len(),
        low_confidence: golds.len() - high.len(),
        consensus: levels,
        gold_quadrants,
        model_outcomes,
        model_missing: golds.len() - preds.len(),
    };

    let human_preds: Vec<Predictions> = humans
        .iter()
        .map(|h| predictions_of(input.records, h, 0))
        .collect();
    let accuracy = AccuracyBlock {
        model: annotator_accuracy(model, &golds, &high, &preds)?,
        humans: humans
            .iter()
            .zip(&human_preds)
            .map(|(h, p)| annotator_accuracy(h, &golds, &high, p))
            .collect::<Result<_, _>>()?,
    };

    let mut subgroup: Vec<SubgroupRow> = humans
        .iter()
        .zip(&human_preds)
        .map(|(h, p)| SubgroupRow::new(h, metrics::subgroup_accuracy(&golds, p)))
        .collect();
    subgroup.push(SubgroupRow::new(
        model,
        metrics::subgroup_accuracy(&golds, &preds),
    ));

    // tracks the model labeled, for every statistic that needs a full label table
    let labeled: HashSet<&str> = preds
        .iter()
        .filter(|(_, o)| o.is_labeled())
        .map(|(t, _)| t.as_str())
        .collect();
    let mut roster: Vec<String> = humans.to_vec();
    roster.push(model.to_string());
    let combined = corpus::build_annotation_set(input.records, &roster, input.run_index, false)?
        .filter_tracks(|t| labeled.contains(t));
    let human_only = combined
        .select_raters(&humans.iter().map(String::as_str).collect::<Vec<_>>())
        .expect("humans are in the combined roster");
    let agreement =
        metrics::agreement_summary(&combined, &golds, Some(model)).map_err(metric("kappa"))?;
    let h = humans.len();
    let kappa = KappaBlock {
        tracks: combined.len(),
        model_vs_gold: agreement.vs_gold[h].into(),
        mean_human_vs_gold: mean_stat(&agreement.vs_gold[..h]),
        agreement,
    };

    let per_annotator = humans
        .iter()
        .map(|hm| {
            metrics::avg_squared_js(&golds, &preds, &JsReference::Annotator(hm.clone()))
                .map_err(metric("js"))
        })
        .collect::<Result<_, _>>()?;
    let js = JsBlock {
        aggregated: metrics::avg_squared_js(&golds, &preds, &JsReference::Aggregated)
            .map_err(metric("js"))?,
        per_annotator,
    };

    let boot_gold: Vec<&GoldStandard> = high
        .iter()
        .filter(|g| labeled.contains(g.track_id.as_str()))
        .collect();
    let gold_seq: Vec<EmotionLabel> = boot_gold
        .iter()
        .map(|g| g.majority.expect("high-confidence gold has a majority"))
        .collect();
    let model_seq: Vec<EmotionLabel> = boot_gold
        .iter()
        .map(|g| preds[&g.track_id].label().expect("labeled subset"))
        .collect();
    let pairwise = humans
        .iter()
        .map(|hm| {
            let seq: Vec<EmotionLabel> = boot_gold.iter().map(|g| g.expert_labels[hm]).collect();
            resample::bootstrap_kappa_diff(
                &format!("kappa_vs_gold[{model}] - kappa_vs_gold[{hm}]"),
                &model_seq,
                &seq,
                &gold_seq,
                &input.bootstrap,
            )
            .map_err(boot("bootstrap"))
        })
        .collect::<Result<_, _>>()?;
    let fleiss = resample::bootstrap_fleiss_diff(
        "fleiss[humans] - fleiss[humans+model]",
        &human_only,
        &combined,
        &input.bootstrap,
    )
    .map_err(boot("bootstrap"))?;

    let param_of = |key: &str| {
        model_records
            .iter()
            .find_map(|r| r.params.get(key).cloned())
    };
    let provenance = Provenance {
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed: input.bootstrap.seed,
        rng: RNG_NAME.to_string(),
        bootstrap_iterations: input.bootstrap.iterations,
        bootstrap_level: input.bootstrap.level,
        config_hash: input.config_hash.clone(),
        model: param_of(param::MODEL)
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_else(|| model.to_string()),
        run_index: input.run_index,
        template_version: param_of(param::TEMPLATE_VERSION)
            .and_then(|v| v.as_str().map(String::from)),
        mode: param_of(param::MODE).and_then(|v| v.as_str().map(String::from)),
        temperature: param_of(param::TEMPERATURE).and_then(|v| v.as_f64()),
    };

    Ok(EvaluationReport {
        dataset,
        accuracy,
        subgroup,
        kappa,
        js,
        bootstrap: BootstrapBlock { pairwise, fleiss },
        confusion: (&metrics::confusion(&golds, &preds)).into(),
        stability: input.stability.map(StabilityBlock::from),
        exclusions,
        provenance,
    })
}

fn mean_stat(cells: &[KappaCell]) -> Stat {
    let vals: Vec<f64> = cells.iter().filter_map(|c| c.value).collect();
    Stat {
        value: (!vals.is_empty())
            .then(|| metrics::compensated_sum(vals.iter().copied()) / vals.len() as f64),
        n: cells.iter().map(|c| c.n).min().unwrap_or(0),
    }
}

/// Canonical JSON: keys sorted, floats in shortest round-trip form.
pub fn render_json(report: &EvaluationReport) -> String {
    let value: Value = serde_json::to_value(report).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

/// Six significant digits, fixed notation; `NA` for missing values.
pub fn fmt6(x: Option<f64>) -> String {
    let Some(x) = x else {
        return "NA".to_string();
    };
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit
    let digits = s.chars().filter(char::is_ascii_digit).count();
    let leading_zeros = s
        .trim_start_matches('-')
        .chars()
        .take_while(|c| *c == '0' || *c == '.')
        .filter(|c| *c == '0')
        .count();
    if digits - leading_zeros > 6 && decimals > 0 {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        return s.trim_start_matches('-').to_string();
    }
    s
}

fn f6(x: f64) -> String {
    fmt6(Some(x))
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn row<I: IntoIterator<Item = S>, S: Into<String>>(cells: I) -> Vec<String> {
    cells.into_iter().map(Into::into).collect()
}

fn accuracy_table(r: &EvaluationReport) -> Table {
    let header = row([
        "annotator",
        "binary",
        "binary_matches",
        "binary_n",
        "weighted_all",
        "weighted_all_n",
        "weighted_high",
        "weighted_high_n",
    ]);
    let rows = r
        .accuracy
        .humans
        .iter()
        .chain([&r.accuracy.model])
        .map(|a| {
            vec![
                a.annotator.clone(),
                f6(a.binary.value),
                a.binary.matches.to_string(),
                a.binary.total.to_string(),
                f6(a.weighted_all.value),
                a.weighted_all.total.to_string(),
                f6(a.weighted_high.value),
                a.weighted_high.total.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

fn models_table(r: &EvaluationReport) -> Table {
    let header = row([
        "model",
        "annotator",
        "mode",
        "template_version",
        "temperature",
        "binary",
        "binary_n",
        "weighted_all",
        "weighted_high",
        "not_enough_info",
    ]);
    let p = &r.provenance;
    let a = &r.accuracy.model;
    let rows = vec![vec![
        p.model.clone(),
        a.annotator.clone(),
        p.mode.clone().unwrap_or_else(|| "NA".into()),
        p.template_version.clone().unwrap_or_else(|| "NA".into()),
        fmt6(p.temperature),
        f6(a.binary.value),
        a.binary.total.to_string(),
        f6(a.weighted_all.value),
        f6(a.weighted_high.value),
        r.dataset.model_outcomes[AnnotationOutcome::NEI_TOKEN].to_string(),
    ]];
    (header, rows)
}

fn subgroup_table(r: &EvaluationReport) -> Table {
    let header = row([
        "annotator",
        "full_matches",
        "full_total",
        "full_rate",
        "partial_majority",
        "partial_minority",
        "partial_neither",
        "partial_total",
        "partial_majority_rate",
        "partial_minority_rate",
        "none_any_expert",
        "none_total",
        "none_any_expert_rate",
    ]);
    let rows = r
        .subgroup
        .iter()
        .map(|s| {
            let c = &s.counts;
            vec![
                s.annotator.clone(),
                c.full_matches.to_string(),
                c.full_total.to_string(),
                fmt6(s.full_rate.value),
                c.partial_majority.to_string(),
                c.partial_minority.to_string(),
                c.partial_neither.to_string(),
                c.partial_total.to_string(),
                fmt6(s.partial_majority_rate.value),
                fmt6(s.partial_minority_rate.value),
                c.none_any_expert.to_string(),
                c.none_total.to_string(),
                fmt6(s.none_any_expert_rate.value),
            ]
        })
        .collect();
    (header, rows)
}

fn pairwise_table(r: &EvaluationReport) -> Table {
    let a = &r.kappa.agreement;
    let mut header = vec!["annotator".to_string()];
    header.extend(a.annotators.iter().cloned());
    header.extend(row(["gold", "n", "gold_n"]));
    let rows = a
        .annotators
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut cells = vec![name.clone()];
            cells.extend(a.pairwise[i].iter().map(|c| fmt6(c.value)));
            cells.push(fmt6(a.vs_gold[i].value));
            cells.push(r.kappa.tracks.to_string());
            cells.push(a.vs_gold[i].n.to_string());
            cells
        })
        .collect();
    (header, rows)
}

fn kappa_summary_rows(r: &EvaluationReport) -> Vec<(&'static str, Stat)> {
    let a = &r.kappa.agreement;
    let na = Stat { value: None, n: 0 };
    vec![
        ("model_vs_gold", r.kappa.model_vs_gold),
        ("mean_human_vs_gold", r.kappa.mean_human_vs_gold),
        ("mean_human_pairwise", a.mean_human_pairwise.into()),
        (
            "mean_model_human",
            a.mean_model_human.map_or(na, Into::into),
        ),
        ("fleiss_humans", a.fleiss_humans.into()),
        (
            "fleiss_with_model",
            a.fleiss_with_model.map_or(na, Into::into),
        ),
    ]
}

fn kappa_summary_table(r: &EvaluationReport) -> Table {
    let rows = kappa_summary_rows(r)
        .into_iter()
        .map(|(name, s)| vec![name.to_string(), fmt6(s.value), s.n.to_string()])
        .collect();
    (row(["statistic", "value", "n"]), rows)
}

fn bootstrap_table(r: &EvaluationReport) -> Table {
    let header = row([
        "statistic",
        "point_estimate",
        "bootstrap_mean",
        "ci_low",
        "ci_high",
        "significant",
        "n",
        "iterations",
        "level",
        "seed",
        "redraws",
    ]);
    let rows = r
        .bootstrap
        .pairwise
        .iter()
        .chain([&r.bootstrap.fleiss])
        .map(|b| {
            vec![
                b.statistic.clone(),
                f6(b.point_estimate),
                f6(b.bootstrap_mean),
                f6(b.ci_low),
                f6(b.ci_high),
                b.significant.to_string(),
                b.n.to_string(),
                b.iterations.to_string(),
                f6(b.level),
                b.seed.to_string(),
                b.redraws.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

fn reference_name(r: &JsReference) -> String {
    match r {
        JsReference::Aggregated => "aggregated".to_string(),
        JsReference::Annotator(a) => a.clone(),
    }
}

fn js_table(r: &EvaluationReport) -> Table {
    let rows =
        r.js.per_annotator
            .iter()
            .chain([&r.js.aggregated])
            .map(|j| {
                vec![
                    reference_name(&j.reference),
                    f6(j.mean),
                    j.n.to_string(),
                    j.excluded.to_string(),
                ]
            })
            .collect();
    (row(["reference", "mean", "n", "excluded"]), rows)
}

fn confusion_tables(r: &EvaluationReport) -> (Table, Table) {
    let mut header = vec!["gold".to_string()];
    header.extend(EmotionLabel::ALL.iter().map(|l| l.code().to_string()));
    header.push("n".into());
    let c = &r.confusion;
    let counts = EmotionLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut cells = vec![l.code().to_string()];
            cells.extend(c.counts[i].iter().map(u64::to_string));
            cells.push(c.counts[i].iter().sum::<u64>().to_string());
            cells
        })
        .collect();
    let normalized = EmotionLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut cells = vec![l.code().to_string()];
            match c.normalized[i] {
                Some(p) => cells.extend(p.iter().map(|&x| f6(x))),
                None => cells.extend(std::iter::repeat_n("NA".to_string(), 4)),
            }
            cells.push(c.counts[i].iter().sum::<u64>().to_string());
            cells
        })
        .collect();
    ((header.clone(), counts), (header, normalized))
}

/// All CSV tables keyed by file name, in [`CSV_FILES`] order.
pub fn render_csv(report: &EvaluationReport) -> Vec<(&'static str, String)> {
    let (counts, normalized) = confusion_tables(report);
    let tables = [
        accuracy_table(report),
        models_table(report),
        subgroup_table(report),
        pairwise_table(report),
        kappa_summary_table(report),
        bootstrap_table(report),
        js_table(report),
        counts,
        normalized,
    ];
    CSV_FILES
        .iter()
        .zip(tables)
        .map(|(name, (header, rows))| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for r in rows {
                w.write_record(&r).expect("in-memory write");
            }
            let bytes = w.into_inner().expect("in-memory flush");
            (*name, String::from_utf8(bytes).expect("utf-8 cells"))
        })
        .collect()
}

fn text_table(out: &mut String, (header, rows): &Table) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    out.push_str(&line(header));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out.push('\n');
}

/// Plain-text summary with one captioned section per table.
pub fn render_text(report: &EvaluationReport) -> String {
    let r = report;
    let d = &r.dataset;
    let mut out = String::new();
    let _ = writeln!(out, "{} {} evaluation summary", TOOL_NAME, TOOL_VERSION);
    let _ = writeln!(
        out,
        "model {} against {} ({} tracks)\n",
        d.model,
        d.humans.join(", "),
        d.tracks
    );
    let _ = writeln!(
        out,
        "Consensus: full {}, partial {}, none {}; high-confidence {}",
        d.consensus[&ConsensusLevel::Full],
        d.consensus[&ConsensusLevel::Partial],
        d.consensus[&ConsensusLevel::None],
        d.high_confidence
    );
    let _ = writeln!(
        out,
        "Model outcomes: {} labeled, {} not enough information, {} missing\n",
        d.tracks - d.model_missing - d.model_outcomes[AnnotationOutcome::NEI_TOKEN],
        d.model_outcomes[AnnotationOutcome::NEI_TOKEN],
        d.model_missing
    );

    let (counts, normalized) = confusion_tables(r);
    let sections: [(&str, Table); 9] = [
        ("Accuracy against the majority-vote gold", accuracy_table(r)),
        ("Model run", models_table(r)),
        ("Accuracy by consensus level", subgroup_table(r)),
        ("Pairwise Cohen's kappa", pairwise_table(r)),
        ("Kappa summary", kappa_summary_table(r)),
        ("Bootstrap differences", bootstrap_table(r)),
        (
            "Mean squared Jensen-Shannon divergence from the model",
            js_table(r),
        ),
        ("Confusion counts (rows gold, columns model)", counts),
        ("Confusion, row-normalized", normalized),
    ];
    for (caption, table) in &sections {
        let _ = writeln!(out, "{caption}");
        text_table(&mut out, table);
    }

    if let Some(s) = &r.stability {
        let _ = writeln!(
            out,
            "Stability over {} runs: {}/{} identical, {} majority-consistent, {} inconsistent\n",
            s.runs, s.all_identical, s.tracks, s.majority_consistent, s.fully_inconsistent
        );
    }
    let mut reasons: BTreeMap<ExclusionReason, usize> = BTreeMap::new();
    for e in &r.exclusions {
        *reasons.entry(e.reason).or_default() += 1;
    }
    let _ = writeln!(
        out,
        "Excluded model samples: {} not enough information, {} missing",
        reasons
            .get(&ExclusionReason::NotEnoughInformation)
            .unwrap_or(&0),
        reasons
            .get(&ExclusionReason::MissingPrediction)
            .unwrap_or(&0)
    );
    let p = &r.provenance;
    let _ = writeln!(
        out,
        "Bootstrap: {} iterations, level {}, seed {}, {}",
        p.bootstrap_iterations,
        f6(p.bootstrap_level),
        p.seed,
        p.rng
    );
    if let Some(h) = &p.config_hash {
        let _ = writeln!(out, "Config hash: {h}");
    }
    out
}

/// Writes `report.json`, the CSV tables and `summary.txt` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files: Vec<(String, String)> = vec![("report.json".into(), render_json(report))];
    files.extend(
        render_csv(report)
            .into_iter()
            .map(|(n, s)| (n.to_string(), s)),
    );
    files.push(("summary.txt".into(), render_text(report)));
    let mut written = Vec::with_capacity(files.len());
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
