use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use super::cache::normalize_url;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Injectable `url -> (status, body)` function.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchResponse, FetchError>;
}

impl<F> Fetcher for F
where
    F: Fn(&str) -> Result<FetchResponse, FetchError> + Send + Sync,
{
    fn fetch(&self, url: &str) -> Result<FetchResponse, FetchError> {
        self(url)
    }
}

/// Blocking HTTP GET.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, user_agent: &str) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(user_agent)
            .build()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<FetchResponse, FetchError> {
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(FetchResponse { status, body })
    }
}

/// Serves local files listed in `<dir>/routes.json` (`{"<url>": "<relative path>"}`).
/// Unlisted URLs answer 404.
#[derive(Debug, Clone)]
pub struct FixtureFetcher {
    dir: PathBuf,
    routes: BTreeMap<String, String>,
}

pub const ROUTES_FILE: &str = "routes.json";

impl FixtureFetcher {
    pub fn open(dir: &Path) -> Result<Self, FetchError> {
        let path = dir.join(ROUTES_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| FetchError::Fixture(format!("{}: {e}", path.display())))?;
        let raw: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| FetchError::Fixture(format!("{}: {e}", path.display())))?;
        let routes = raw
            .into_iter()
            .map(|(url, file)| (normalize_url(&url), file))
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            routes,
        })
    }
}

impl Fetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<FetchResponse, FetchError> {
        match self.routes.get(&normalize_url(url)) {
            Some(file) => {
                let body = std::fs::read_to_string(self.dir.join(file))
                    .map_err(|e| FetchError::Fixture(format!("{file}: {e}")))?;
                Ok(FetchResponse { status: 200, body })
            }
            None => Ok(FetchResponse {
                status: 404,
                body: String::new(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_routes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.html"), "<p>hi</p>").unwrap();
        std::fs::write(
            dir.path().join(ROUTES_FILE),
            r#"{"https://imslp.org/search?q=%22A%22+B": "a.html"}"#,
        )
        .unwrap();
        let f = FixtureFetcher::open(dir.path()).unwrap();
        let hit = f.fetch("https://imslp.org/search?q=%22A%22+B").unwrap();
        assert_eq!(hit.status, 200);
        assert_eq!(hit.body, "<p>hi</p>");
        assert_eq!(f.fetch("https://imslp.org/other").unwrap().status, 404);
    }
}
