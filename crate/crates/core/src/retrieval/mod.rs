//! Context retrieval: search keywords from title and composer, polite fetching
//! from an allowlist of music reference sites, text extraction, a disk cache,
//! and assembly of a size-bounded context bundle per track.

mod cache;
mod extract;
mod fetch;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::corpus::Track;
use crate::ratelimit::RateLimiter;

pub use cache::{cache_key, normalize_url, CacheEntry, PageCache};
pub use extract::{extract_text, EXTRACTOR_VERSION};
pub use fetch::{FetchError, FetchResponse, Fetcher, FixtureFetcher, HttpFetcher, ROUTES_FILE};

pub const DEFAULT_DOC_CHAR_CAP: usize = 4_000;
pub const DEFAULT_BUNDLE_CHAR_CAP: usize = 12_000;

/// Placed between documents in an assembled bundle.
pub const DOCUMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid source config: {0}")]
    Config(String),
    #[error("cache write failed for {url}: {source}")]
    CacheWrite {
        url: String,
        #[source]
        source: std::io::Error,
    },
}

/// One allowlisted site and its search URL pattern (`{query}` is replaced by the
/// percent-encoded query).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDomain {
    pub domain: String,
    pub search_url: String,
}

impl SourceDomain {
    pub fn new(domain: impl Into<String>, search_url: impl Into<String>) -> Self {
        Self {
            domain: domain.into(),
            search_url: search_url.into(),
        }
    }

    pub fn url_for(&self, query: &str) -> String {
        let encoded: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
        self.search_url.replace("{query}", &encoded)
    }
}

/// The default reference sites, in priority order.
pub fn default_domains() -> Vec<SourceDomain> {
    vec![
        SourceDomain::new(
            "en.wikipedia.org",
            "https://en.wikipedia.org/w/index.php?search={query}",
        ),
        SourceDomain::new(
            "imslp.org",
            "https://imslp.org/index.php?title=Special:Search&search={query}",
        ),
        SourceDomain::new("naxos.com", "https://www.naxos.com/Search/?q={query}"),
        SourceDomain::new(
            "allmusic.com",
            "https://www.allmusic.com/search/all/{query}",
        ),
        SourceDomain::new(
            "classical-music.com",
            "https://www.classical-music.com/search?q={query}",
        ),
        SourceDomain::new(
            "gramophone.co.uk",
            "https://www.gramophone.co.uk/search?q={query}",
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    /// Allowlist in priority order.
    pub domains: Vec<SourceDomain>,
    pub rate_limit_per_domain: f64,
    pub doc_char_cap: usize,
    pub bundle_char_cap: usize,
    pub cache_dir: PathBuf,
    pub offline: bool,
}

impl SourceConfig {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            domains: default_domains(),
            rate_limit_per_domain: 1.0,
            doc_char_cap: DEFAULT_DOC_CHAR_CAP,
            bundle_char_cap: DEFAULT_BUNDLE_CHAR_CAP,
            cache_dir: cache_dir.into(),
            offline: false,
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.domains.is_empty() {
            return Err(RetrievalError::Config("allowlist is empty".into()));
        }
        if !(self.rate_limit_per_domain.is_finite() && self.rate_limit_per_domain > 0.0) {
            return Err(RetrievalError::Config(
                "rate_limit_per_domain must be > 0".into(),
            ));
        }
        if self.doc_char_cap == 0 || self.bundle_char_cap == 0 {
            return Err(RetrievalError::Config("character caps must be > 0".into()));
        }
        for d in &self.domains {
            if !d.search_url.contains("{query}") {
                return Err(RetrievalError::Config(format!(
                    "search_url for {} lacks {{query}}",
                    d.domain
                )));
            }
        }
        Ok(())
    }

    fn priority(&self, domain: &str) -> usize {
        self.domains
            .iter()
            .position(|d| d.domain == domain)
            .unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub track_id: String,
    pub source_url: String,
    pub source_domain: String,
    pub retrieved_at: String,
    pub extracted_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub track_id: String,
    pub documents: Vec<ContextDocument>,
    pub assembled_text: String,
    pub truncated: bool,
}

impl ContextBundle {
    pub fn empty(track_id: impl Into<String>) -> Self {
        Self {
            track_id: track_id.into(),
            documents: Vec::new(),
            assembled_text: String::new(),
            truncated: false,
        }
    }
}

/// `"{title}" {composer}` with internal whitespace collapsed.
pub fn build_query(track: &Track) -> String {
    let collapse = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    format!(
        "\"{}\" {}",
        collapse(&track.title),
        collapse(&track.composer)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchWarning {
    pub domain: String,
    pub url: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct FetchReport {
    pub documents: Vec<ContextDocument>,
    pub warnings: Vec<FetchWarning>,
    pub cache_hits: usize,
    /// Requests handed to the fetcher.
    pub requests: usize,
}

/// Shared state for crawling: cache, per-domain limiter and fetcher.
pub struct Retriever {
    config: SourceConfig,
    cache: PageCache,
    limiter: RateLimiter,
    fetcher: Arc<dyn Fetcher>,
    clock: Arc<dyn Clock>,
}

impl Retriever {
    pub fn new(
        config: SourceConfig,
        fetcher: Arc<dyn Fetcher>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, RetrievalError> {
        config.validate()?;
        Ok(Self {
            cache: PageCache::new(&config.cache_dir),
            limiter: RateLimiter::new(config.rate_limit_per_domain, clock.clone()),
            fetcher,
            clock,
            config,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Fetches at most one document per allowlisted domain.
    ///
    /// Per-URL network failures become warnings. Successful and 4xx responses
    /// are cached; a cache hit issues no request, so repeating a call only
    /// re-requests URLs that failed in transport or with a 5xx status. Offline, only cache hits are
    /// returned. A failed cache write aborts the call.
    pub fn fetch_context(&self, track: &Track) -> Result<FetchReport, RetrievalError> {
        let query = build_query(track);
        let mut report = FetchReport::default();
        for source in &self.config.domains {
            let url = source.url_for(&query);
            let warn = |message: String| FetchWarning {
                domain: source.domain.clone(),
                url: url.clone(),
                message,
            };
            log::info!("{}: {} {}", track.id, source.domain, url);
            let entry = match self.cache.get(&source.domain, &url) {
                Some(entry) => {
                    report.cache_hits += 1;
                    entry
                }
                None if self.config.offline => {
                    report.warnings.push(warn("offline: not in cache".into()));
                    continue;
                }
                None => {
                    self.limiter.acquire(&source.domain);
                    report.requests += 1;
                    let response = match self.fetcher.fetch(&url) {
                        Ok(r) => r,
                        Err(e) => {
                            report.warnings.push(warn(e.to_string()));
                            continue;
                        }
                    };
                    let ok = (200..300).contains(&response.status);
                    if !ok && !(400..500).contains(&response.status) {
                        report
                            .warnings
                            .push(warn(format!("HTTP status {}", response.status)));
                        continue;
                    }
                    let entry = CacheEntry {
                        url: url.clone(),
                        status: response.status,
                        fetched_at: self.clock.timestamp(),
                        extracted_text: ok.then(|| extract_text(&response.body)),
                        body: if ok { response.body } else { String::new() },
                        extractor_version: EXTRACTOR_VERSION,
                    };
                    self.cache.put(&source.domain, &entry).map_err(|source| {
                        RetrievalError::CacheWrite {
                            url: url.clone(),
                            source,
                        }
                    })?;
                    entry
                }
            };
            if !(200..300).contains(&entry.status) {
                report
                    .warnings
                    .push(warn(format!("HTTP status {}", entry.status)));
                continue;
            }
            let text = match entry.extracted_text {
                Some(t) if entry.extractor_version == EXTRACTOR_VERSION => t,
                _ => extract_text(&entry.body),
            };
            if text.is_empty() {
                report.warnings.push(warn("no text extracted".into()));
                continue;
            }
            report.documents.push(ContextDocument {
                track_id: track.id.clone(),
                source_url: entry.url,
                source_domain: source.domain.clone(),
                retrieved_at: entry.fetched_at,
                extracted_text: text,
            });
        }
        Ok(report)
    }

    /// Runs [`Self::fetch_context`] for every track on `workers` threads.
    /// Results keep the input order.
    pub fn fetch_all(
        &self,
        tracks: &[Track],
        workers: usize,
    ) -> Result<Vec<FetchReport>, RetrievalError> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| tracks.par_iter().map(|t| self.fetch_context(t)).collect())
    }

    pub fn bundle(&self, track: &Track, documents: Vec<ContextDocument>) -> ContextBundle {
        assemble_bundle(&track.id, documents, &self.config)
    }
}

/// Clips `text` to at most `cap` characters, preferring the last whitespace
/// boundary at or before the cap. Returns the clipped slice and whether
/// anything was removed.
fn clip_at_whitespace(text: &str, cap: usize) -> (&str, bool) {
    let Some((cut, _)) = text.char_indices().nth(cap) else {
        return (text, false);
    };
    let head = &text[..cut];
    // boundary falls exactly between a word and whitespace
    if text[cut..].starts_with(char::is_whitespace) {
        return (head.trim_end(), true);
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) => (head[..ws].trim_end(), true),
        None => (head, true),
    }
}

/// Orders documents by allowlist priority, clips each to the per-document cap
/// and the concatenation to the bundle budget (both counted in characters).
pub fn assemble_bundle(
    track_id: &str,
    mut documents: Vec<ContextDocument>,
    config: &SourceConfig,
) -> ContextBundle {
    documents.sort_by_key(|d| config.priority(&d.source_domain));
    let mut truncated = false;
    let mut parts = Vec::with_capacity(documents.len());
    for d in &documents {
        let (clipped, cut) = clip_at_whitespace(&d.extracted_text, config.doc_char_cap);
        truncated |= cut;
        if !clipped.is_empty() {
            parts.push(clipped);
        }
    }
    let joined = parts.join(DOCUMENT_SEPARATOR);
    let (assembled, cut) = clip_at_whitespace(&joined, config.bundle_char_cap);
    truncated |= cut;
    ContextBundle {
        track_id: track_id.to_string(),
        documents,
        assembled_text: assembled.to_string(),
        truncated,
    }
}

/// Groups fetched documents and assembles bundles keyed by track id.
pub fn bundles_by_track(
    tracks: &[Track],
    reports: Vec<FetchReport>,
    config: &SourceConfig,
) -> HashMap<String, ContextBundle> {
    tracks
        .iter()
        .zip(reports)
        .map(|(t, r)| (t.id.clone(), assemble_bundle(&t.id, r.documents, config)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use std::sync::Mutex;
    use std::time::Duration;

    fn doc(domain: &str, text: &str) -> ContextDocument {
        ContextDocument {
            track_id: "t1".into(),
            source_url: format!("https://{domain}/x"),
            source_domain: domain.into(),
            retrieved_at: "1970-01-01T00:00:00Z".into(),
            extracted_text: text.into(),
        }
    }

    fn words(n_chars: usize) -> String {
        // "abcd " repeated, trimmed to exactly n_chars with no trailing space
        let mut s: String = "abcd "
            .repeat(n_chars / 5 + 1)
            .chars()
            .take(n_chars)
            .collect();
        if s.ends_with(' ') {
            s.pop();
            s.push('x');
        }
        s
    }

    #[test]
    fn query_format() {
        let t = Track::new("t1", "Nocturne Op.9 No.2", "Chopin");
        assert_eq!(build_query(&t), "\"Nocturne Op.9 No.2\" Chopin");
        let t = Track::new("t2", "La  Campanella", " Liszt ");
        assert_eq!(build_query(&t), "\"La Campanella\" Liszt");
    }

    #[test]
    fn bundle_without_clipping() {
        let mut cfg = SourceConfig::new("/nonexistent");
        cfg.doc_char_cap = 1000;
        cfg.bundle_char_cap = 5000;
        let b = assemble_bundle(
            "t1",
            vec![
                doc("imslp.org", &words(100)),
                doc("en.wikipedia.org", &words(100)),
            ],
            &cfg,
        );
        assert_eq!(
            b.assembled_text.chars().count(),
            200 + DOCUMENT_SEPARATOR.chars().count()
        );
        assert!(!b.truncated);
        assert_eq!(b.documents[0].source_domain, "en.wikipedia.org");
    }

    #[test]
    fn bundle_clips_long_document() {
        let mut cfg = SourceConfig::new("/nonexistent");
        cfg.doc_char_cap = 1000;
        let b = assemble_bundle("t1", vec![doc("imslp.org", &words(9000))], &cfg);
        assert!(b.assembled_text.chars().count() <= 1000);
        assert!(b.truncated);
        assert!(b.assembled_text.ends_with("abcd"));
    }

    #[test]
    fn empty_bundle() {
        let cfg = SourceConfig::new("/nonexistent");
        let b = assemble_bundle("t1", vec![], &cfg);
        assert_eq!(b.assembled_text, "");
        assert!(!b.truncated);
    }

    #[test]
    fn clip_without_whitespace_hard_cuts() {
        assert_eq!(clip_at_whitespace("abcdef", 3), ("abc", true));
        assert_eq!(clip_at_whitespace("ab cd", 5), ("ab cd", false));
        assert_eq!(clip_at_whitespace("ab cd", 3), ("ab", true));
        assert_eq!(clip_at_whitespace("ab cd", 2), ("ab", true));
        assert_eq!(clip_at_whitespace("éé éé", 4), ("éé", true));
    }

    /// Serves fixed bodies for a subset of domains and logs request times.
    struct Scripted {
        pages: HashMap<String, String>,
        clock: Arc<VirtualClock>,
        log: Mutex<Vec<(String, Duration)>>,
        transport_errors: bool,
    }

    impl Fetcher for Scripted {
        fn fetch(&self, url: &str) -> Result<FetchResponse, FetchError> {
            let host = url::Url::parse(url)
                .unwrap()
                .host_str()
                .unwrap()
                .to_string();
            self.log
                .lock()
                .unwrap()
                .push((host.clone(), self.clock.elapsed()));
            let key = self
                .pages
                .keys()
                .find(|d| host.ends_with(d.as_str()))
                .cloned();
            match key {
                Some(k) => Ok(FetchResponse {
                    status: 200,
                    body: self.pages[&k].clone(),
                }),
                None if host.contains("naxos") && self.transport_errors => {
                    Err(FetchError::Transport("reset".into()))
                }
                None => Ok(FetchResponse {
                    status: 404,
                    body: String::new(),
                }),
            }
        }
    }

    fn setup(dir: &std::path::Path) -> (Arc<VirtualClock>, Arc<Scripted>, SourceConfig) {
        let clock = Arc::new(VirtualClock::default());
        let mut pages = HashMap::new();
        pages.insert(
            "wikipedia.org".to_string(),
            "<p>A melancholic nocturne.</p><script>x</script>".to_string(),
        );
        pages.insert(
            "imslp.org".to_string(),
            "<div>Composed in 1831.</div>".to_string(),
        );
        let fetcher = Arc::new(Scripted {
            pages,
            clock: clock.clone(),
            log: Mutex::new(Vec::new()),
            transport_errors: false,
        });
        let mut cfg = SourceConfig::new(dir);
        cfg.rate_limit_per_domain = 2.0;
        (clock, fetcher, cfg)
    }

    #[test]
    fn partial_sources_yield_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let (clock, fetcher, cfg) = setup(dir.path());
        let r = Retriever::new(cfg, fetcher.clone(), clock).unwrap();
        let t = Track::new("t1", "Nocturne", "Chopin");
        let rep = r.fetch_context(&t).unwrap();
        assert_eq!(rep.documents.len(), 2);
        assert_eq!(rep.warnings.len(), 4);
        assert_eq!(rep.requests, 6);
        assert_eq!(rep.documents[0].extracted_text, "A melancholic nocturne.");

        // warm cache: no new requests, identical documents
        let again = r.fetch_context(&t).unwrap();
        assert_eq!(again.requests, 0);
        assert_eq!(again.documents, rep.documents);
        assert_eq!(again.warnings.len(), 4);
    }

    #[test]
    fn transport_failures_are_retried_next_time() {
        let dir = tempfile::tempdir().unwrap();
        let (clock, fetcher, cfg) = setup(dir.path());
        let fetcher = Arc::new(Scripted {
            pages: fetcher.pages.clone(),
            clock: clock.clone(),
            log: Mutex::new(Vec::new()),
            transport_errors: true,
        });
        let r = Retriever::new(cfg, fetcher, clock).unwrap();
        let t = Track::new("t1", "Nocturne", "Chopin");
        let first = r.fetch_context(&t).unwrap();
        assert_eq!(first.warnings.len(), 4);
        assert!(first.warnings.iter().any(|w| w.message.contains("reset")));
        assert_eq!(r.fetch_context(&t).unwrap().requests, 1);
    }

    #[test]
    fn offline_uses_cache_only() {
        let dir = tempfile::tempdir().unwrap();
        let (clock, fetcher, cfg) = setup(dir.path());
        let t = Track::new("t1", "Nocturne", "Chopin");
        let mut offline = cfg.clone();
        offline.offline = true;

        let cold = Retriever::new(offline.clone(), fetcher.clone(), clock.clone()).unwrap();
        let rep = cold.fetch_context(&t).unwrap();
        assert!(rep.documents.is_empty());
        assert_eq!(rep.warnings.len(), 6);
        assert_eq!(fetcher.log.lock().unwrap().len(), 0);

        let online = Retriever::new(cfg, fetcher.clone(), clock.clone()).unwrap();
        let first = online.fetch_context(&t).unwrap();
        let warm = Retriever::new(offline, fetcher.clone(), clock).unwrap();
        let second = warm.fetch_context(&t).unwrap();
        assert_eq!(first.documents, second.documents);
        assert_eq!(second.requests, 0);
    }

    #[test]
    fn bundles_are_deterministic() {
        let tracks: Vec<Track> = (0..5)
            .map(|i| Track::new(format!("t{i}"), format!("Etude {i}"), "Liszt"))
            .collect();
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let (clock, fetcher, cfg) = setup(dir.path());
            let r = Retriever::new(cfg.clone(), fetcher, clock).unwrap();
            let reports = r.fetch_all(&tracks, 3).unwrap();
            let bundles = bundles_by_track(&tracks, reports, &cfg);
            let mut texts: Vec<_> = bundles
                .into_values()
                .map(|b| serde_json::to_string(&b.assembled_text).unwrap())
                .collect();
            texts.sort();
            outputs.push(texts);
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn per_domain_rate_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let (clock, fetcher, cfg) = setup(dir.path());
        let r = Retriever::new(cfg, fetcher.clone(), clock).unwrap();
        let tracks: Vec<Track> = (0..9)
            .map(|i| Track::new(format!("t{i}"), format!("Piece {i}"), "Liszt"))
            .collect();
        r.fetch_all(&tracks, 1).unwrap();
        let log = fetcher.log.lock().unwrap();
        let mut by_domain: HashMap<&str, Vec<Duration>> = HashMap::new();
        for (d, t) in log.iter() {
            by_domain.entry(d).or_default().push(*t);
        }
        for times in by_domain.values() {
            assert_eq!(times.len(), 9);
            for &s in times {
                let n = times
                    .iter()
                    .filter(|&&t| t >= s && t < s + Duration::from_secs(1))
                    .count();
                assert!(n <= 2, "{n} requests in one second");
            }
        }
    }

    #[test]
    fn cache_write_failure_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let (clock, fetcher, mut cfg) = setup(dir.path());
        cfg.cache_dir = blocker;
        let r = Retriever::new(cfg, fetcher, clock).unwrap();
        let err = r.fetch_context(&Track::new("t1", "A", "B")).unwrap_err();
        assert!(matches!(err, RetrievalError::CacheWrite { .. }));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SourceConfig::new("/tmp");
        cfg.rate_limit_per_domain = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SourceConfig::new("/tmp");
        cfg.domains.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = SourceConfig::new("/tmp");
        cfg.doc_char_cap = 0;
        assert!(cfg.validate().is_err());
    }
}
