//! Data model and on-disk formats: tracks, quadrant labels, annotation records
//! and the per-track rating table built from them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

/// Errors raised while loading or validating corpus files.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate track id `{id}`")]
    DuplicateTrack { line: usize, id: String },
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("line {line}: duplicate annotation for track `{track_id}`, annotator `{annotator_id}`, run {run_index}")]
    DuplicateAnnotation {
        line: usize,
        track_id: String,
        annotator_id: String,
        run_index: u32,
    },
    #[error("line {line}: model record for `{annotator_id}` is missing param `{param}`")]
    MissingParam {
        line: usize,
        annotator_id: String,
        param: &'static str,
    },
    #[error("roster is empty")]
    EmptyRoster,
    #[error("incomplete annotation set: {}", format_missing(.0))]
    Incomplete(Vec<(String, String)>),
}

fn format_missing(pairs: &[(String, String)]) -> String {
    let shown: Vec<String> = pairs
        .iter()
        .take(20)
        .map(|(t, r)| format!("({t}, {r})"))
        .collect();
    let more = pairs.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One music piece; the annotation unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    pub title: String,
    pub composer: String,
}

impl Track {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        composer: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            composer: composer.into(),
        }
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        for (field, value) in [
            ("id", &self.id),
            ("title", &self.title),
            ("composer", &self.composer),
        ] {
            if value.trim().is_empty() {
                return Err(CorpusError::EmptyField { line, field });
            }
        }
        Ok(())
    }
}

/// Valence-arousal quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmotionLabel {
    /// High valence, high arousal.
    Hvha,
    /// High valence, low arousal.
    Hvla,
    /// Low valence, high arousal.
    Lvha,
    /// Low valence, low arousal.
    Lvla,
}

impl EmotionLabel {
    /// Fixed display and column order.
    pub const ALL: [EmotionLabel; 4] = [
        EmotionLabel::Hvha,
        EmotionLabel::Hvla,
        EmotionLabel::Lvha,
        EmotionLabel::Lvla,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            EmotionLabel::Hvha => "HVHA",
            EmotionLabel::Hvla => "HVLA",
            EmotionLabel::Lvha => "LVHA",
            EmotionLabel::Lvla => "LVLA",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            EmotionLabel::Hvha => "High Valence High Arousal",
            EmotionLabel::Hvla => "High Valence Low Arousal",
            EmotionLabel::Lvha => "Low Valence High Arousal",
            EmotionLabel::Lvla => "Low Valence Low Arousal",
        }
    }

    fn from_axes(high_valence: bool, high_arousal: bool) -> Self {
        match (high_valence, high_arousal) {
            (true, true) => EmotionLabel::Hvha,
            (true, false) => EmotionLabel::Hvla,
            (false, true) => EmotionLabel::Lvha,
            (false, false) => EmotionLabel::Lvla,
        }
    }
}

/// Lowercases and folds hyphens, en and em dashes, `_` and runs of whitespace into single spaces.
fn normalize_token(s: &str) -> String {
    let folded: String = s
        .chars()
        .map(|c| match c {
            '-' | '\u{2013}' | '\u{2014}' | '_' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl FromStr for EmotionLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s);
        let code = match norm.as_str() {
            "hvha" => Some(EmotionLabel::Hvha),
            "hvla" => Some(EmotionLabel::Hvla),
            "lvha" => Some(EmotionLabel::Lvha),
            "lvla" => Some(EmotionLabel::Lvla),
            _ => None,
        };
        if let Some(label) = code {
            return Ok(label);
        }
        let words: Vec<&str> = norm.split(' ').collect();
        if let [v, "valence", a, "arousal"] = words.as_slice() {
            let level = |w: &str| match w {
                "high" => Some(true),
                "low" => Some(false),
                _ => None,
            };
            if let (Some(v), Some(a)) = (level(v), level(a)) {
                return Ok(EmotionLabel::from_axes(v, a));
            }
        }
        Err(CorpusError::UnknownLabel(s.to_string()))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Result of one annotation judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnnotationOutcome {
    Labeled(EmotionLabel),
    /// Model escape outcome when the context is insufficient. Never a gold value.
    NotEnoughInformation,
}

impl AnnotationOutcome {
    pub const NEI_TOKEN: &'static str = "NOT_ENOUGH_INFO";

    pub fn label(self) -> Option<EmotionLabel> {
        match self {
            AnnotationOutcome::Labeled(l) => Some(l),
            AnnotationOutcome::NotEnoughInformation => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self.label().is_some()
    }
}

impl From<EmotionLabel> for AnnotationOutcome {
    fn from(l: EmotionLabel) -> Self {
        AnnotationOutcome::Labeled(l)
    }
}

impl FromStr for AnnotationOutcome {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "not enough info" | "not enough information" | "nei" => {
                Ok(AnnotationOutcome::NotEnoughInformation)
            }
            _ => s.parse().map(AnnotationOutcome::Labeled),
        }
    }
}

impl fmt::Display for AnnotationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationOutcome::Labeled(l) => f.write_str(l.code()),
            AnnotationOutcome::NotEnoughInformation => f.write_str(Self::NEI_TOKEN),
        }
    }
}

impl Serialize for AnnotationOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnnotationOutcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parameter keys carried by model-produced records.
pub mod param {
    pub const MODEL: &str = "model";
    pub const TEMPERATURE: &str = "temperature";
    pub const TEMPLATE_VERSION: &str = "template_version";
    pub const MODE: &str = "mode";
}

/// One (annotator, track, outcome) judgment.
///
/// Equality ignores `timestamp`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub track_id: String,
    pub annotator_id: String,
    pub outcome: AnnotationOutcome,
    #[serde(default)]
    pub run_index: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl PartialEq for AnnotationRecord {
    fn eq(&self, other: &Self) -> bool {
        self.track_id == other.track_id
            && self.annotator_id == other.annotator_id
            && self.outcome == other.outcome
            && self.run_index == other.run_index
            && self.params == other.params
    }
}

impl AnnotationRecord {
    /// A human judgment: run 0, no params.
    pub fn human(
        track_id: impl Into<String>,
        annotator_id: impl Into<String>,
        label: EmotionLabel,
    ) -> Self {
        Self {
            track_id: track_id.into(),
            annotator_id: annotator_id.into(),
            outcome: AnnotationOutcome::Labeled(label),
            run_index: 0,
            params: BTreeMap::new(),
            timestamp: None,
        }
    }

    /// Records carrying a `model` param come from a language model.
    pub fn is_model(&self) -> bool {
        self.params.contains_key(param::MODEL)
    }

    pub fn key(&self) -> (&str, &str, u32) {
        (&self.track_id, &self.annotator_id, self.run_index)
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        if self.track_id.trim().is_empty() {
            return Err(CorpusError::EmptyField {
                line,
                field: "track_id",
            });
        }
        if self.annotator_id.trim().is_empty() {
            return Err(CorpusError::EmptyField {
                line,
                field: "annotator_id",
            });
        }
        if !self.params.is_empty() {
            for p in [param::MODEL, param::TEMPERATURE] {
                if !self.params.contains_key(p) {
                    return Err(CorpusError::MissingParam {
                        line,
                        annotator_id: self.annotator_id.clone(),
                        param: p,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct TrackRow {
    id: String,
    title: String,
    composer: String,
}

fn check_tracks(rows: Vec<(usize, Track)>) -> Result<Vec<Track>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, t) in rows {
        t.validate(line)?;
        if !seen.insert(t.id.clone()) {
            return Err(CorpusError::DuplicateTrack { line, id: t.id });
        }
        out.push(t);
    }
    Ok(out)
}

/// Loads tracks from CSV (`id,title,composer` header) or, for `.jsonl` files, one
/// JSON object per line. Row order is preserved.
pub fn load_tracks(path: &Path) -> Result<Vec<Track>, CorpusError> {
    let is_jsonl = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("jsonl"))
        .unwrap_or(false);
    if is_jsonl {
        let file = File::open(path).map_err(io_err(path))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TrackRow = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            rows.push((line_no, Track::new(row.id, row.title, row.composer)));
        }
        check_tracks(rows)
    } else {
        let file = File::open(path).map_err(io_err(path))?;
        read_tracks_csv(file)
    }
}

fn read_tracks_csv<R: std::io::Read>(reader: R) -> Result<Vec<Track>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::None)
        .from_reader(reader);
    let mut rows = Vec::new();
    for result in rdr.deserialize::<TrackRow>() {
        let row = result.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        // header is line 1
        let line = rows.len() + 2;
        rows.push((line, Track::new(row.id, row.title, row.composer)));
    }
    check_tracks(rows)
}

pub fn save_tracks(path: &Path, tracks: &[Track]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let wrap = |e: csv::Error| CorpusError::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["id", "title", "composer"]).map_err(wrap)?;
    for t in tracks {
        w.write_record([&t.id, &t.title, &t.composer])
            .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

/// Parses annotation JSONL text. Blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line).map_err(|e| {
            let msg = e.to_string();
            // surface the offending token directly for label errors
            match msg.find("unknown label") {
                Some(pos) => CorpusError::Parse {
                    line: line_no,
                    message: msg[pos..].to_string(),
                },
                None => CorpusError::Parse {
                    line: line_no,
                    message: msg,
                },
            }
        })?;
        rec.validate(line_no)?;
        let key = (
            rec.track_id.clone(),
            rec.annotator_id.clone(),
            rec.run_index,
        );
        if !seen.insert(key) {
            return Err(CorpusError::DuplicateAnnotation {
                line: line_no,
                track_id: rec.track_id,
                annotator_id: rec.annotator_id,
                run_index: rec.run_index,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text)
}

pub fn write_annotations<W: Write>(mut w: W, records: &[AnnotationRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_annotations(BufWriter::new(file), records).map_err(io_err(path))
}

/// Complete per-track outcome table for a fixed rater roster.
///
/// Rows are ordered by track id; columns follow the roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    roster: Vec<String>,
    tracks: Vec<String>,
    rows: Vec<Vec<AnnotationOutcome>>,
    missing: Vec<(String, String)>,
}

impl AnnotationSet {
    pub fn from_rows(
        roster: Vec<String>,
        tracks: Vec<String>,
        rows: Vec<Vec<AnnotationOutcome>>,
    ) -> Self {
        assert_eq!(tracks.len(), rows.len());
        assert!(rows.iter().all(|r| r.len() == roster.len()));
        Self {
            roster,
            tracks,
            rows,
            missing: Vec::new(),
        }
    }

    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    pub fn tracks(&self) -> &[String] {
        &self.tracks
    }

    pub fn rows(&self) -> &[Vec<AnnotationOutcome>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// (track, rater) pairs dropped because a roster rater had no record.
    pub fn missing(&self) -> &[(String, String)] {
        &self.missing
    }

    pub fn rater_index(&self, annotator_id: &str) -> Option<usize> {
        self.roster.iter().position(|r| r == annotator_id)
    }

    /// Outcomes of one rater, aligned with [`Self::tracks`].
    pub fn column(&self, rater: usize) -> Vec<AnnotationOutcome> {
        self.rows.iter().map(|r| r[rater]).collect()
    }

    /// Sub-table restricted to the named raters, in the given order.
    pub fn select_raters(&self, raters: &[&str]) -> Option<AnnotationSet> {
        let idx: Option<Vec<usize>> = raters.iter().map(|r| self.rater_index(r)).collect();
        let idx = idx?;
        Some(AnnotationSet {
            roster: raters.iter().map(|s| s.to_string()).collect(),
            tracks: self.tracks.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| idx.iter().map(|&i| row[i]).collect())
                .collect(),
            missing: Vec::new(),
        })
    }

    /// Sub-table restricted to the tracks satisfying `keep`.
    pub fn filter_tracks(&self, mut keep: impl FnMut(&str) -> bool) -> AnnotationSet {
        let (tracks, rows) = self
            .tracks
            .iter()
            .zip(&self.rows)
            .filter(|(t, _)| keep(t))
            .map(|(t, r)| (t.clone(), r.clone()))
            .unzip();
        AnnotationSet {
            roster: self.roster.clone(),
            tracks,
            rows,
            missing: Vec::new(),
        }
    }
}

/// Builds the rating table for `roster` from loose records.
///
/// `run_index` selects which run of model annotators to use; human records
/// (no `model` param) are run-independent. In strict mode any missing
/// (track, rater) pair is an error, otherwise incomplete tracks are dropped
/// and listed in [`AnnotationSet::missing`].
pub fn build_annotation_set(
    records: &[AnnotationRecord],
    roster: &[String],
    run_index: u32,
    strict: bool,
) -> Result<AnnotationSet, CorpusError> {
    if roster.is_empty() {
        return Err(CorpusError::EmptyRoster);
    }
    let col: BTreeMap<&str, usize> = roster
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut table: BTreeMap<&str, Vec<Option<AnnotationOutcome>>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for rec in records {
        let Some(&c) = col.get(rec.annotator_id.as_str()) else {
            continue;
        };
        if rec.is_model() && rec.run_index != run_index {
            continue;
        }
        if !seen.insert((rec.track_id.as_str(), c)) {
            return Err(CorpusError::DuplicateAnnotation {
                line: 0,
                track_id: rec.track_id.clone(),
                annotator_id: rec.annotator_id.clone(),
                run_index: rec.run_index,
            });
        }
        table
            .entry(rec.track_id.as_str())
            .or_insert_with(|| vec![None; roster.len()])[c] = Some(rec.outcome);
    }

    let mut missing = Vec::new();
    let mut tracks = Vec::new();
    let mut rows = Vec::new();
    for (track, row) in table {
        let mut complete = true;
        for (c, cell) in row.iter().enumerate() {
            if cell.is_none() {
                complete = false;
                missing.push((track.to_string(), roster[c].clone()));
            }
        }
        if complete {
            tracks.push(track.to_string());
            rows.push(row.into_iter().map(Option::unwrap).collect());
        }
    }
    if strict && !missing.is_empty() {
        return Err(CorpusError::Incomplete(missing));
    }
    Ok(AnnotationSet {
        roster: roster.to_vec(),
        tracks,
        rows,
        missing,
    })
}
