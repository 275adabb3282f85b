//! Synthetic corpora with controlled consensus splits and model match rates.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotator::{PromptMode, ScriptEntry};
use crate::config::{
    BootstrapSection, EvaluationSection, PathsConfig, ProviderKind, ProviderSection,
    RetrievalSection, RunConfig,
};
use crate::corpus::{self, param, AnnotationOutcome, AnnotationRecord, EmotionLabel, Track};
use crate::retrieval::{build_query, default_domains, SourceDomain};

pub const HUMANS: [&str; 3] = ["human1", "human2", "human3"];
pub const MOCK_MODEL: &str = "mock-model";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("inconsistent shape: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
}

/// Group sizes and model behaviour of a synthetic three-rater corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureShape {
    /// Tracks where all three humans agree.
    pub full: usize,
    /// Full tracks where the model picks the shared label.
    pub full_matches: usize,
    /// Tracks with a 2-1 split.
    pub partial: usize,
    pub partial_matches: usize,
    pub partial_minority: usize,
    /// Tracks with three distinct human labels.
    pub none: usize,
    /// None tracks where the model picks one of the human labels.
    pub none_matches: usize,
    /// Per human, Partial tracks where that human sits in the majority. Must
    /// sum to `2 * partial`; spread evenly when absent.
    pub human_partial_majority: Option<[usize; 3]>,
    /// Model misses that are NOT_ENOUGH_INFO instead of a wrong label.
    pub nei: usize,
    /// Tracks whose second stability run gets a different label.
    pub unstable: usize,
}

impl FixtureShape {
    /// 211 / 175 / 14 split with 180 and 94 model matches.
    pub fn reference() -> Self {
        Self {
            full: 211,
            full_matches: 180,
            partial: 175,
            partial_matches: 94,
            partial_minority: 0,
            none: 14,
            none_matches: 5,
            human_partial_majority: Some([114, 115, 121]),
            nei: 0,
            unstable: 15,
        }
    }

    pub fn total(&self) -> usize {
        self.full + self.partial + self.none
    }

    fn misses(&self) -> usize {
        (self.full - self.full_matches)
            + (self.partial - self.partial_matches - self.partial_minority)
            + (self.none - self.none_matches)
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::Shape(m));
        if self.full_matches > self.full {
            return bad(format!(
                "full_matches {} > full {}",
                self.full_matches, self.full
            ));
        }
        if self.partial_matches + self.partial_minority > self.partial {
            return bad(format!(
                "partial_matches + partial_minority {} > partial {}",
                self.partial_matches + self.partial_minority,
                self.partial
            ));
        }
        if self.none_matches > self.none {
            return bad(format!(
                "none_matches {} > none {}",
                self.none_matches, self.none
            ));
        }
        if let Some(m) = self.human_partial_majority {
            if m.iter().any(|&x| x > self.partial) || m.iter().sum::<usize>() != 2 * self.partial {
                return bad(format!(
                    "human_partial_majority {m:?} must each be <= {} and sum to {}",
                    self.partial,
                    2 * self.partial
                ));
            }
        }
        if self.nei > self.misses() {
            return bad(format!("nei {} > model misses {}", self.nei, self.misses()));
        }
        if self.unstable > self.total() {
            return bad(format!(
                "unstable {} > tracks {}",
                self.unstable,
                self.total()
            ));
        }
        if self.total() == 0 {
            return bad("no tracks".into());
        }
        Ok(())
    }

    fn dissent_counts(&self) -> [usize; 3] {
        match self.human_partial_majority {
            Some(m) => m.map(|x| self.partial - x),
            None => {
                let base = self.partial / 3;
                let extra = self.partial % 3;
                [0, 1, 2].map(|i| base + usize::from(i < extra))
            }
        }
    }
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub shape: FixtureShape,
    pub seed: u64,
    pub tracks: Vec<Track>,
    pub human_records: Vec<AnnotationRecord>,
    /// Model outcome per track, aligned with `tracks`.
    pub model_outcomes: Vec<AnnotationOutcome>,
    /// Run-1 outcome for tracks that vary across stability runs.
    pub unstable: BTreeMap<String, AnnotationOutcome>,
}

const COMPOSERS: [&str; 8] = [
    "Chopin",
    "Liszt",
    "Schumann",
    "Brahms",
    "Debussy",
    "Scriabin",
    "Mendelssohn",
    "Grieg",
];
const FORMS: [&str; 8] = [
    "Nocturne",
    "Etude",
    "Ballade",
    "Intermezzo",
    "Prelude",
    "Mazurka",
    "Impromptu",
    "Lyric Piece",
];

fn mood_words(label: EmotionLabel) -> &'static str {
    match label {
        EmotionLabel::Hvha => "jubilant, brilliant and spirited",
        EmotionLabel::Hvla => "serene, tender and warm",
        EmotionLabel::Lvha => "stormy, anguished and restless",
        EmotionLabel::Lvla => "mournful, sombre and withdrawn",
    }
}

fn other_label(rng: &mut ChaCha8Rng, exclude: &[EmotionLabel]) -> EmotionLabel {
    let choices: Vec<EmotionLabel> = EmotionLabel::ALL
        .into_iter()
        .filter(|l| !exclude.contains(l))
        .collect();
    *choices.choose(rng).expect("a label remains")
}

impl Fixture {
    pub fn generate(shape: &FixtureShape, seed: u64) -> Result<Self, FixtureError> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.total();

        #[derive(Clone, Copy, PartialEq)]
        enum Group {
            Full,
            Partial,
            None,
        }
        let mut groups: Vec<Group> = std::iter::repeat_n(Group::Full, shape.full)
            .chain(std::iter::repeat_n(Group::Partial, shape.partial))
            .chain(std::iter::repeat_n(Group::None, shape.none))
            .collect();
        groups.shuffle(&mut rng);

        let mut dissenters: Vec<usize> = shape
            .dissent_counts()
            .iter()
            .enumerate()
            .flat_map(|(h, &c)| std::iter::repeat_n(h, c))
            .collect();
        dissenters.shuffle(&mut rng);
        let mut dissenters = dissenters.into_iter();

        // which tracks of each group the model gets right
        let mut positions: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            positions.entry(*g as u8).or_default().push(i);
        }
        let chosen = |g: Group, k: usize, rng: &mut ChaCha8Rng| -> HashSet<usize> {
            let mut v = positions.get(&(g as u8)).cloned().unwrap_or_default();
            v.shuffle(rng);
            v.into_iter().take(k).collect()
        };
        let full_hit = chosen(Group::Full, shape.full_matches, &mut rng);
        let mut partial_pos = positions
            .get(&(Group::Partial as u8))
            .cloned()
            .unwrap_or_default();
        partial_pos.shuffle(&mut rng);
        let partial_hit: HashSet<usize> = partial_pos
            .iter()
            .take(shape.partial_matches)
            .copied()
            .collect();
        let partial_min: HashSet<usize> = partial_pos
            .iter()
            .skip(shape.partial_matches)
            .take(shape.partial_minority)
            .copied()
            .collect();
        let none_hit = chosen(Group::None, shape.none_matches, &mut rng);

        let width = n.to_string().len().max(4);
        let mut tracks = Vec::with_capacity(n);
        let mut human_records = Vec::with_capacity(3 * n);
        let mut model_outcomes = Vec::with_capacity(n);
        let mut misses = Vec::new();
        for (i, group) in groups.iter().enumerate() {
            let id = format!("trk{:0width$}", i + 1);
            let composer = COMPOSERS[rng.gen_range(0..COMPOSERS.len())];
            let title = format!(
                "{} No. {} in {}",
                FORMS[rng.gen_range(0..FORMS.len())],
                i + 1,
                ["C major", "A minor", "E-flat major", "F-sharp minor"][rng.gen_range(0..4)]
            );
            tracks.push(Track::new(&id, title, composer));

            let majority = EmotionLabel::ALL[rng.gen_range(0..4)];
            let (labels, pred) = match group {
                Group::Full => {
                    let pred = if full_hit.contains(&i) {
                        majority
                    } else {
                        misses.push(i);
                        other_label(&mut rng, &[majority])
                    };
                    ([majority; 3], pred)
                }
                Group::Partial => {
                    let minority = other_label(&mut rng, &[majority]);
                    let mut labels = [majority; 3];
                    labels[dissenters.next().expect("dissenter per partial track")] = minority;
                    let pred = if partial_hit.contains(&i) {
                        majority
                    } else if partial_min.contains(&i) {
                        minority
                    } else {
                        misses.push(i);
                        other_label(&mut rng, &[majority, minority])
                    };
                    (labels, pred)
                }
                Group::None => {
                    let mut all = EmotionLabel::ALL;
                    all.shuffle(&mut rng);
                    let labels = [all[0], all[1], all[2]];
                    let pred = if none_hit.contains(&i) {
                        labels[rng.gen_range(0..3)]
                    } else {
                        misses.push(i);
                        all[3]
                    };
                    (labels, pred)
                }
            };
            for (h, l) in HUMANS.iter().zip(labels) {
                human_records.push(AnnotationRecord::human(&id, *h, l));
            }
            model_outcomes.push(AnnotationOutcome::Labeled(pred));
        }

        misses.shuffle(&mut rng);
        for &i in misses.iter().take(shape.nei) {
            model_outcomes[i] = AnnotationOutcome::NotEnoughInformation;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let unstable = order
            .into_iter()
            .take(shape.unstable)
            .map(|i| {
                let alt = match model_outcomes[i] {
                    AnnotationOutcome::Labeled(l) => other_label(&mut rng, &[l]),
                    AnnotationOutcome::NotEnoughInformation => {
                        EmotionLabel::ALL[rng.gen_range(0..4)]
                    }
                };
                (tracks[i].id.clone(), AnnotationOutcome::Labeled(alt))
            })
            .collect();

        Ok(Self {
            shape: shape.clone(),
            seed,
            tracks,
            human_records,
            model_outcomes,
            unstable,
        })
    }

    /// Model records as the annotator would produce them for `run_index`.
    pub fn model_records(&self, model: &str, run_index: u32) -> Vec<AnnotationRecord> {
        self.tracks
            .iter()
            .zip(&self.model_outcomes)
            .map(|(t, &o)| {
                let outcome = match self.unstable.get(&t.id) {
                    Some(&alt) if run_index == 1 => alt,
                    _ => o,
                };
                let params: BTreeMap<String, Value> = [
                    (param::MODEL, Value::from(model)),
                    (param::TEMPERATURE, Value::from(0.0)),
                    (param::TEMPLATE_VERSION, Value::from("context-v1")),
                    (param::MODE, Value::from(PromptMode::Context.as_str())),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
                AnnotationRecord {
                    track_id: t.id.clone(),
                    annotator_id: model.to_string(),
                    outcome,
                    run_index,
                    params,
                    timestamp: None,
                }
            })
            .collect()
    }

    /// Mock-provider script: one run-independent entry per track plus a
    /// run-1 override for every unstable track.
    pub fn script(&self) -> Vec<ScriptEntry> {
        let text = |o: AnnotationOutcome| match o {
            AnnotationOutcome::Labeled(l) => format!(
                "The sources portray the piece as {}.\n\nLabel: {}",
                mood_words(l),
                l.code()
            ),
            AnnotationOutcome::NotEnoughInformation => {
                "The text only lists catalogue details.\n\nNot enough information".to_string()
            }
        };
        let mut out = Vec::with_capacity(self.tracks.len() + self.unstable.len());
        for (t, &o) in self.tracks.iter().zip(&self.model_outcomes) {
            out.push(ScriptEntry {
                track_id: t.id.clone(),
                run_index: None,
                response_text: Some(text(o)),
                http_status: None,
            });
            if let Some(&alt) = self.unstable.get(&t.id) {
                out.push(ScriptEntry {
                    track_id: t.id.clone(),
                    run_index: Some(1),
                    response_text: Some(text(alt)),
                    http_status: None,
                });
            }
        }
        out
    }

    /// Two of the built-in sites serve a page per track.
    pub fn domains() -> Vec<SourceDomain> {
        default_domains().into_iter().take(2).collect()
    }

    fn page(&self, i: usize, domain: &str) -> String {
        let t = &self.tracks[i];
        let desc = match self.model_outcomes[i] {
            AnnotationOutcome::Labeled(l) => {
                format!("Listeners often describe this piece as {}.", mood_words(l))
            }
            AnnotationOutcome::NotEnoughInformation => {
                "Catalogue entry; no description is available.".to_string()
            }
        };
        format!(
            "<!DOCTYPE html>\n<html><head><title>{title} - {domain}</title>\
             <script>var tracker = 1;</script></head>\n<body>\
             <nav><a href=\"/\">Home</a> | <a href=\"/search\">Search</a></nav>\n\
             <h1>{title}</h1>\n<p>{title} is a work for solo piano by {composer}.</p>\n\
             <p>{desc}</p>\n<footer>Content available under open licence.</footer>\
             </body></html>\n",
            title = t.title,
            composer = t.composer,
        )
    }

    /// Writes the corpus, mock script, HTML pages and a ready-to-run config.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, FixtureError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| FixtureError::Io { path, source }
        };
        let html = dir.join("html");
        std::fs::create_dir_all(&html).map_err(io(&html))?;

        corpus::save_tracks(&dir.join("tracks.csv"), &self.tracks)?;
        corpus::save_annotations(&dir.join("human_annotations.jsonl"), &self.human_records)?;

        let mut script = String::new();
        for e in self.script() {
            script.push_str(&serde_json::to_string(&e).expect("script entry serializes"));
            script.push('\n');
        }
        let script_path = dir.join("mock_script.jsonl");
        std::fs::write(&script_path, script).map_err(io(&script_path))?;

        let mut routes = BTreeMap::new();
        for (i, t) in self.tracks.iter().enumerate() {
            let query = build_query(t);
            for d in Self::domains() {
                let file = format!("{}_{}.html", t.id, d.domain.replace('.', "_"));
                let path = html.join(&file);
                std::fs::write(&path, self.page(i, &d.domain)).map_err(io(&path))?;
                routes.insert(d.url_for(&query), file);
            }
        }
        let routes_path = html.join(crate::retrieval::ROUTES_FILE);
        std::fs::write(
            &routes_path,
            serde_json::to_string_pretty(&routes).expect("routes serialize") + "\n",
        )
        .map_err(io(&routes_path))?;

        let config_path = dir.join("config.toml");
        std::fs::write(&config_path, self.config().to_toml()).map_err(io(&config_path))?;
        Ok(config_path)
    }

    /// Config with paths relative to the fixture directory.
    pub fn config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            mode: PromptMode::Context,
            parallelism: 4,
            paths: PathsConfig {
                tracks: "tracks.csv".into(),
                human_annotations: vec!["human_annotations.jsonl".into()],
                cache: "cache".into(),
                annotations: "annotations.jsonl".into(),
                checkpoint: "annotations.checkpoint.jsonl".into(),
                stability: "stability.jsonl".into(),
                gold: "gold.jsonl".into(),
                output: "report".into(),
            },
            retrieval: RetrievalSection {
                rate_limit_per_domain: 10_000.0,
                fixture_dir: Some("html".into()),
                domains: Self::domains(),
                ..RetrievalSection::default()
            },
            provider: ProviderSection {
                kind: ProviderKind::Mock,
                model: MOCK_MODEL.into(),
                base_url: String::new(),
                temperature: 0.0,
                max_retries: 2,
                timeout_secs: 60,
                rate_limit: 100_000.0,
                api_key_env: crate::annotator::DEFAULT_API_KEY_ENV.into(),
                script: Some("mock_script.jsonl".into()),
                template: None,
                template_version: None,
                annotator_id: None,
            },
            evaluation: EvaluationSection {
                humans: HUMANS.map(String::from).to_vec(),
                run_index: 0,
                stability_runs: 3,
                bootstrap: BootstrapSection::default(),
            },
        }
    }
}
