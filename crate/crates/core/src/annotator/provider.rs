//! Chat-completion providers: an OpenAI-style HTTP client and a scripted mock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "ANNOTATOR_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout: Duration,
    /// Requests per second across all workers.
    pub rate_limit: f64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.0,
            max_retries: 3,
            timeout: Duration::from_secs(60),
            rate_limit: 5.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be >= 0".into());
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err("rate_limit must be > 0".into());
        }
        if self.model.trim().is_empty() {
            return Err("model name is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub track_id: &'a str,
    pub run_index: u32,
    pub model: &'a str,
    pub temperature: f64,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("no scripted response for track `{track_id}` run {run_index}")]
    Unscripted { track_id: String, run_index: u32 },
}

impl ProviderError {
    /// Worth retrying with backoff: 429, 5xx and transport failures.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::Transport(_) => true,
            _ => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;
}

/// POSTs `{model, temperature, messages:[{role:"user", content}]}` to
/// `<base_url>/chat/completions` and returns `choices[0].message.content`.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // the key never appears in logs
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: std::env::var(&config.api_key_env).ok(),
        })
    }

    pub fn request_body(request: &CompletionRequest<'_>) -> serde_json::Value {
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        })
    }

    pub fn parse_response(body: &str) -> Result<String, ProviderError> {
        let v: serde_json::Value =
            serde_json::from_str(body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&Self::request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let body: String = body.chars().take(200).collect();
            return Err(ProviderError::Status { status, body });
        }
        Self::parse_response(&body)
    }
}

/// One line of a mock script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub track_id: String,
    /// Absent: applies to every run without a run-specific entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_status: Option<u16>,
}

type ScriptKey = (String, Option<u32>);

/// Replays scripted responses. Several entries for the same key are served in
/// order; the last one then repeats.
pub struct MockProvider {
    script: HashMap<ScriptKey, Vec<ScriptEntry>>,
    served: Mutex<HashMap<ScriptKey, usize>>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, String> {
        let mut script: HashMap<ScriptKey, Vec<ScriptEntry>> = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            if e.response_text.is_some() == e.http_status.is_some() {
                return Err(format!(
                    "script entry {}: exactly one of response_text and http_status is required",
                    i + 1
                ));
            }
            script
                .entry((e.track_id.clone(), e.run_index))
                .or_default()
                .push(e);
        }
        Ok(Self {
            script,
            served: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<Vec<ScriptEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(&text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let exact = (request.track_id.to_string(), Some(request.run_index));
        let any = (request.track_id.to_string(), None);
        let key = if self.script.contains_key(&exact) {
            exact
        } else if self.script.contains_key(&any) {
            any
        } else {
            return Err(ProviderError::Unscripted {
                track_id: request.track_id.to_string(),
                run_index: request.run_index,
            });
        };
        let entries = &self.script[&key];
        let idx = {
            let mut served = self.served.lock().unwrap();
            let n = served.entry(key).or_insert(0);
            let idx = (*n).min(entries.len() - 1);
            *n += 1;
            idx
        };
        let entry = &entries[idx];
        match (&entry.response_text, entry.http_status) {
            (Some(text), _) => Ok(text.clone()),
            (None, Some(status)) => Err(ProviderError::Status {
                status,
                body: "scripted".into(),
            }),
            (None, None) => unreachable!("validated in MockProvider::new"),
        }
    }
}

/// Adapts a closure into a provider.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&CompletionRequest<'_>) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}
