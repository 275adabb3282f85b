//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotator::{PromptMode, ProviderConfig, DEFAULT_API_KEY_ENV};
use crate::resample::BootstrapSpec;
use crate::retrieval::{self, SourceConfig, SourceDomain};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: PromptMode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub paths: PathsConfig,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    pub provider: ProviderSection,
    pub evaluation: EvaluationSection,
}

fn default_mode() -> PromptMode {
    PromptMode::Context
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub tracks: PathBuf,
    pub human_annotations: Vec<PathBuf>,
    #[serde(default = "default_cache")]
    pub cache: PathBuf,
    /// Model annotations for the configured run.
    #[serde(default = "default_annotations")]
    pub annotations: PathBuf,
    /// Append-only progress file for `annotate`.
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    /// Records of every stability run.
    #[serde(default = "default_stability")]
    pub stability: PathBuf,
    #[serde(default = "default_gold")]
    pub gold: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_cache() -> PathBuf {
    "cache".into()
}
fn default_annotations() -> PathBuf {
    "annotations.jsonl".into()
}
fn default_checkpoint() -> PathBuf {
    "annotations.checkpoint.jsonl".into()
}
fn default_stability() -> PathBuf {
    "stability.jsonl".into()
}
fn default_gold() -> PathBuf {
    "gold.jsonl".into()
}
fn default_output() -> PathBuf {
    "report".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub offline: bool,
    pub rate_limit_per_domain: f64,
    pub doc_char_cap: usize,
    pub bundle_char_cap: usize,
    pub timeout_secs: u64,
    pub user_agent: String,
    /// Serve pages from a local `routes.json` directory instead of the network.
    pub fixture_dir: Option<PathBuf>,
    /// Overrides the built-in allowlist when non-empty.
    pub domains: Vec<SourceDomain>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            offline: false,
            rate_limit_per_domain: 1.0,
            doc_char_cap: retrieval::DEFAULT_DOC_CHAR_CAP,
            bundle_char_cap: retrieval::DEFAULT_BUNDLE_CHAR_CAP,
            timeout_secs: 30,
            user_agent: concat!("emolabel/", env!("CARGO_PKG_VERSION")).into(),
            fixture_dir: None,
            domains: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub model: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Mock script (JSONL), required for `kind = "mock"`.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Custom template file; the bundled one for the mode is used otherwise.
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub template_version: Option<String>,
    /// Annotator id on records; defaults to the model name.
    #[serde(default)]
    pub annotator_id: Option<String>,
}

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    60
}
fn default_rate() -> f64 {
    5.0
}
fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub humans: Vec<String>,
    #[serde(default)]
    pub run_index: u32,
    #[serde(default = "default_runs")]
    pub stability_runs: u32,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
}

fn default_runs() -> u32 {
    3
}

/// Bootstrap settings; the seed falls back to the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    pub iterations: usize,
    pub level: f64,
    pub seed: Option<u64>,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = BootstrapSpec::default();
        Self {
            iterations: d.iterations,
            level: d.level,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.resolved(base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if self.evaluation.humans.is_empty() {
            return bad("evaluation.humans is empty".into());
        }
        if self.evaluation.humans.contains(&self.annotator_id()) {
            return bad(format!(
                "model annotator `{}` is listed among the humans",
                self.annotator_id()
            ));
        }
        if self.provider.kind == ProviderKind::Mock && self.provider.script.is_none() {
            return bad("provider.script is required for the mock provider".into());
        }
        if self.provider.kind == ProviderKind::Http && self.provider.base_url.is_empty() {
            return bad("provider.base_url is required for the http provider".into());
        }
        if self.provider.template.is_some() && self.provider.template_version.is_none() {
            return bad("provider.template_version is required with a custom template".into());
        }
        self.provider_config()
            .validate()
            .map_err(ConfigError::Invalid)?;
        self.bootstrap_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.source_config(Path::new(""))
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.tracks);
        paths.human_annotations.iter_mut().for_each(fix);
        fix(&mut paths.cache);
        fix(&mut paths.annotations);
        fix(&mut paths.checkpoint);
        fix(&mut paths.stability);
        fix(&mut paths.gold);
        fix(&mut paths.output);
        if let Some(p) = self.retrieval.fixture_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.provider.script.as_mut() {
            fix(p);
        }
        if let Some(p) = self.provider.template.as_mut() {
            fix(p);
        }
        self
    }

    pub fn annotator_id(&self) -> String {
        self.provider
            .annotator_id
            .clone()
            .unwrap_or_else(|| self.provider.model.clone())
    }

    pub fn provider_config(&self) -> ProviderConfig {
        let p = &self.provider;
        let mut c = ProviderConfig::new(&p.base_url, &p.model);
        c.temperature = p.temperature;
        c.max_retries = p.max_retries;
        c.timeout = Duration::from_secs(p.timeout_secs);
        c.rate_limit = p.rate_limit;
        c.api_key_env = p.api_key_env.clone();
        c
    }

    pub fn source_config(&self, cache_dir: &Path) -> SourceConfig {
        let r = &self.retrieval;
        let mut c = SourceConfig::new(cache_dir);
        if !r.domains.is_empty() {
            c.domains = r.domains.clone();
        }
        c.rate_limit_per_domain = r.rate_limit_per_domain;
        c.doc_char_cap = r.doc_char_cap;
        c.bundle_char_cap = r.bundle_char_cap;
        c.offline = r.offline;
        c
    }

    pub fn bootstrap_spec(&self) -> BootstrapSpec {
        let b = &self.evaluation.bootstrap;
        BootstrapSpec {
            iterations: b.iterations,
            level: b.level,
            seed: b.seed.unwrap_or(self.seed),
        }
    }

    /// Digest of everything that affects results. Paths, parallelism and the
    /// offline switch are left out so relocating a run or changing the worker
    /// count keeps the hash.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.parallelism = 0;
        c.retrieval.offline = false;
        c.retrieval.fixture_dir = None;
        c.provider.script = None;
        c.provider.template = None;
        c.provider.api_key_env = String::new();
        c.paths = PathsConfig {
            tracks: PathBuf::new(),
            human_annotations: Vec::new(),
            cache: PathBuf::new(),
            annotations: PathBuf::new(),
            checkpoint: PathBuf::new(),
            stability: PathBuf::new(),
            gold: PathBuf::new(),
            output: PathBuf::new(),
        };
        let json = serde_json::to_string(&serde_json::to_value(&c).expect("config serializes"))
            .expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
