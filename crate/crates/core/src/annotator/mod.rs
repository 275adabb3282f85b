//! Language-model annotation: prompt rendering, provider calls with retries,
//! checkpointed batches and the repeated-run stability check.

mod prompt;
mod provider;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;
use crate::corpus::{param, AnnotationOutcome, AnnotationRecord, Track};
use crate::ratelimit::RateLimiter;
use crate::retrieval::ContextBundle;

pub use prompt::{parse_label, render_prompt, PromptMode, PromptTemplate};
pub use provider::{
    ChatProvider, CompletionRequest, FnProvider, HttpProvider, MockProvider, ProviderConfig,
    ProviderError, ScriptEntry, DEFAULT_API_KEY_ENV,
};

/// First transport retry waits this long; each further retry doubles it.
pub const INITIAL_BACKOFF: Duration = Duration::from_secs(1);
/// Extra attempts after an unparseable response.
pub const PARSE_RETRIES: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("template: {0}")]
    Template(String),
    #[error("no label found in response: {0:?}")]
    NoLabel(String),
    #[error("ambiguous response names several outcomes: {}", .0.join(", "))]
    Ambiguous(Vec<String>),
    #[error("track `{track_id}`: provider failed after {attempts} attempt(s): {source}")]
    Provider {
        track_id: String,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("track `{track_id}`: unparseable response after retry: {reason}")]
    Unparseable { track_id: String, reason: String },
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stability check needs at least 2 runs, got {0}")]
    TooFewRuns(u32),
    #[error("{} track(s) failed in run {run_index}", .failures.len())]
    RunFailed {
        run_index: u32,
        failures: Vec<AnnotationFailure>,
    },
    #[error("invalid provider config: {0}")]
    Config(String),
}

/// Run-log entry for a track that produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub track_id: String,
    pub run_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Records in input track order (failed tracks omitted).
    pub records: Vec<AnnotationRecord>,
    pub failures: Vec<AnnotationFailure>,
    /// Tracks whose record came from the checkpoint.
    pub resumed: usize,
}

impl BatchOutcome {
    pub fn nei_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.outcome == AnnotationOutcome::NotEnoughInformation)
            .count()
    }

    pub fn labeled_count(&self) -> usize {
        self.records.len() - self.nei_count()
    }
}

pub struct Annotator {
    provider: Arc<dyn ChatProvider>,
    config: ProviderConfig,
    template: PromptTemplate,
    annotator_id: String,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
}

impl Annotator {
    /// `annotator_id` defaults to the model name.
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        config: ProviderConfig,
        template: PromptTemplate,
        annotator_id: Option<String>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AnnotateError> {
        config.validate().map_err(AnnotateError::Config)?;
        Ok(Self {
            limiter: RateLimiter::new(config.rate_limit, clock.clone()),
            annotator_id: annotator_id.unwrap_or_else(|| config.model.clone()),
            provider,
            config,
            template,
            clock,
        })
    }

    pub fn annotator_id(&self) -> &str {
        &self.annotator_id
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Renders the prompt for `track`, picking the bundle only in context mode.
    /// A missing bundle in context mode renders an empty context.
    pub fn prompt_for(
        &self,
        track: &Track,
        bundles: &HashMap<String, ContextBundle>,
    ) -> Result<String, AnnotateError> {
        match self.template.mode() {
            PromptMode::TitleOnly => render_prompt(&self.template, track, None),
            PromptMode::Context => {
                let empty;
                let bundle = match bundles.get(&track.id) {
                    Some(b) => b,
                    None => {
                        empty = ContextBundle::empty(&track.id);
                        &empty
                    }
                };
                render_prompt(&self.template, track, Some(bundle))
            }
        }
    }

    fn params(&self) -> BTreeMap<String, Value> {
        let mut p = BTreeMap::new();
        p.insert(param::MODEL.into(), Value::from(self.config.model.clone()));
        p.insert(
            param::TEMPERATURE.into(),
            Value::from(self.config.temperature),
        );
        p.insert(
            param::TEMPLATE_VERSION.into(),
            Value::from(self.template.version().to_string()),
        );
        p.insert(
            param::MODE.into(),
            Value::from(self.template.mode().as_str()),
        );
        p
    }

    /// Annotates one track from an already rendered prompt.
    ///
    /// Transient provider errors are retried up to `max_retries` times with
    /// exponential backoff; an unparseable response is retried once.
    pub fn annotate_prompt(
        &self,
        track_id: &str,
        prompt: &str,
        run_index: u32,
    ) -> Result<AnnotationRecord, AnnotateError> {
        let request = CompletionRequest {
            track_id,
            run_index,
            model: &self.config.model,
            temperature: self.config.temperature,
            prompt,
        };
        let mut transport_retries = 0;
        let mut parse_retries = 0;
        let mut attempts = 0;
        loop {
            self.limiter.acquire("provider");
            attempts += 1;
            match self.provider.complete(&request) {
                Ok(text) => match parse_label(&text) {
                    Ok(outcome) => {
                        return Ok(AnnotationRecord {
                            track_id: track_id.to_string(),
                            annotator_id: self.annotator_id.clone(),
                            outcome,
                            run_index,
                            params: self.params(),
                            timestamp: Some(self.clock.timestamp()),
                        })
                    }
                    Err(e) if parse_retries < PARSE_RETRIES => {
                        log::debug!("{track_id}: retrying after parse failure: {e}");
                        parse_retries += 1;
                    }
                    Err(e) => {
                        return Err(AnnotateError::Unparseable {
                            track_id: track_id.to_string(),
                            reason: e.to_string(),
                        })
                    }
                },
                Err(e) if e.is_transient() && transport_retries < self.config.max_retries => {
                    let wait = INITIAL_BACKOFF * 2u32.saturating_pow(transport_retries);
                    log::debug!("{track_id}: {e}; retrying in {wait:?}");
                    self.clock.sleep(wait);
                    transport_retries += 1;
                }
                Err(source) => {
                    return Err(AnnotateError::Provider {
                        track_id: track_id.to_string(),
                        attempts,
                        source,
                    })
                }
            }
        }
    }

    pub fn annotate(
        &self,
        track: &Track,
        bundle: Option<&ContextBundle>,
        run_index: u32,
    ) -> Result<AnnotationRecord, AnnotateError> {
        let prompt = render_prompt(&self.template, track, bundle)?;
        self.annotate_prompt(&track.id, &prompt, run_index)
    }

    /// Annotates every track on a pool of `parallelism` workers.
    ///
    /// With a checkpoint path, completed records are appended to it as they
    /// finish and records already present for this annotator and run are
    /// reused without calling the provider. Only checkpoint I/O errors abort.
    pub fn batch_annotate(
        &self,
        tracks: &[Track],
        bundles: &HashMap<String, ContextBundle>,
        run_index: u32,
        parallelism: usize,
        checkpoint: Option<&Path>,
    ) -> Result<BatchOutcome, AnnotateError> {
        let mut done: HashMap<String, AnnotationRecord> = HashMap::new();
        let writer = match checkpoint {
            Some(path) => {
                for rec in read_checkpoint(path)? {
                    if rec.annotator_id == self.annotator_id && rec.run_index == run_index {
                        done.insert(rec.track_id.clone(), rec);
                    }
                }
                Some((path, Mutex::new(open_checkpoint(path)?)))
            }
            None => None,
        };

        enum Slot {
            Record(AnnotationRecord, bool),
            Failed(AnnotationFailure),
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .expect("thread pool");
        let slots: Result<Vec<Slot>, AnnotateError> = pool.install(|| {
            tracks
                .par_iter()
                .map(|track| {
                    if let Some(rec) = done.get(&track.id) {
                        return Ok(Slot::Record(rec.clone(), true));
                    }
                    let result = self
                        .prompt_for(track, bundles)
                        .and_then(|p| self.annotate_prompt(&track.id, &p, run_index));
                    match result {
                        Ok(rec) => {
                            if let Some((path, w)) = &writer {
                                let mut w = w.lock().unwrap();
                                append_record(&mut w, &rec).map_err(|source| {
                                    AnnotateError::Checkpoint {
                                        path: path.display().to_string(),
                                        source,
                                    }
                                })?;
                            }
                            Ok(Slot::Record(rec, false))
                        }
                        Err(e) => {
                            log::warn!("{}: {e}", track.id);
                            Ok(Slot::Failed(AnnotationFailure {
                                track_id: track.id.clone(),
                                run_index,
                                reason: e.to_string(),
                            }))
                        }
                    }
                })
                .collect()
        });

        let mut out = BatchOutcome::default();
        for slot in slots? {
            match slot {
                Slot::Record(rec, resumed) => {
                    out.resumed += usize::from(resumed);
                    out.records.push(rec);
                }
                Slot::Failed(f) => out.failures.push(f),
            }
        }
        Ok(out)
    }

    /// Annotates the same tracks `runs` times and tallies label agreement
    /// across runs.
    pub fn stability_run(
        &self,
        tracks: &[Track],
        bundles: &HashMap<String, ContextBundle>,
        runs: u32,
        parallelism: usize,
    ) -> Result<StabilityReport, AnnotateError> {
        if runs < 2 {
            return Err(AnnotateError::TooFewRuns(runs));
        }
        let mut per_run = Vec::with_capacity(runs as usize);
        for run in 0..runs {
            let batch = self.batch_annotate(tracks, bundles, run, parallelism, None)?;
            if !batch.failures.is_empty() {
                return Err(AnnotateError::RunFailed {
                    run_index: run,
                    failures: batch.failures,
                });
            }
            per_run.push(batch.records);
        }
        Ok(StabilityReport::from_runs(&per_run))
    }
}

fn read_checkpoint(path: &Path) -> Result<Vec<AnnotationRecord>, AnnotateError> {
    let mut text = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut text)
                .map_err(|source| AnnotateError::Checkpoint {
                    path: path.display().to_string(),
                    source,
                })?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(AnnotateError::Checkpoint {
                path: path.display().to_string(),
                source,
            })
        }
    }
    // a torn final line from an interrupted run is skipped
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}

fn open_checkpoint(path: &Path) -> Result<BufWriter<File>, AnnotateError> {
    let wrap = |source| AnnotateError::Checkpoint {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(wrap)?;
    let len = file.metadata().map_err(wrap)?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1)).map_err(wrap)?;
        file.read_exact(&mut last).map_err(wrap)?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(wrap)?;
        }
    }
    Ok(BufWriter::new(file))
}

fn append_record(w: &mut BufWriter<File>, rec: &AnnotationRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Agreement of repeated model runs over the same tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: u32,
    pub total: usize,
    /// Same outcome in every run.
    pub all_identical: usize,
    /// Not unanimous, but one outcome holds a strict majority of runs.
    pub majority_consistent: usize,
    pub fully_inconsistent: usize,
    pub consistency_rate: f64,
    /// Per-track outcome tuples ordered by run index.
    pub outcomes: Vec<(String, Vec<AnnotationOutcome>)>,
}

impl StabilityReport {
    /// Builds the report from per-run record lists. Tracks missing from any
    /// run are ignored; track order follows the first run.
    pub fn from_runs(per_run: &[Vec<AnnotationRecord>]) -> Self {
        let runs = per_run.len() as u32;
        let maps: Vec<HashMap<&str, AnnotationOutcome>> = per_run
            .iter()
            .map(|recs| {
                recs.iter()
                    .map(|r| (r.track_id.as_str(), r.outcome))
                    .collect()
            })
            .collect();
        let mut outcomes = Vec::new();
        let mut seen = HashSet::new();
        for rec in per_run.first().into_iter().flatten() {
            if !seen.insert(rec.track_id.as_str()) {
                continue;
            }
            let tuple: Option<Vec<AnnotationOutcome>> = maps
                .iter()
                .map(|m| m.get(rec.track_id.as_str()).copied())
                .collect();
            if let Some(t) = tuple {
                outcomes.push((rec.track_id.clone(), t));
            }
        }
        Self::from_outcomes(runs, outcomes)
    }

    pub fn from_outcomes(runs: u32, outcomes: Vec<(String, Vec<AnnotationOutcome>)>) -> Self {
        let (mut identical, mut majority, mut inconsistent) = (0, 0, 0);
        for (_, t) in &outcomes {
            let mut counts: HashMap<AnnotationOutcome, usize> = HashMap::new();
            for o in t {
                *counts.entry(*o).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            if counts.len() == 1 {
                identical += 1;
            } else if 2 * top > t.len() {
                majority += 1;
            } else {
                inconsistent += 1;
            }
        }
        let total = outcomes.len();
        Self {
            runs,
            total,
            all_identical: identical,
            majority_consistent: majority,
            fully_inconsistent: inconsistent,
            consistency_rate: if total == 0 {
                0.0
            } else {
                identical as f64 / total as f64
            },
            outcomes,
        }
    }

    /// Groups one annotator's records by run index; `None` with fewer than two runs.
    pub fn from_records(records: &[AnnotationRecord], annotator_id: &str) -> Option<Self> {
        let mut by_run: BTreeMap<u32, Vec<AnnotationRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.annotator_id == annotator_id) {
            by_run.entry(r.run_index).or_default().push(r.clone());
        }
        if by_run.len() < 2 {
            return None;
        }
        let mut runs: Vec<Vec<AnnotationRecord>> = by_run.into_values().collect();
        for run in &mut runs {
            run.sort_by(|a, b| a.track_id.cmp(&b.track_id));
        }
        Some(Self::from_runs(&runs))
    }
}
