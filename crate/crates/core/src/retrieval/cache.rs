//! On-disk page cache: `<dir>/<domain>/<sha256(normalized url)>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub url: String,
    /// HTTP status; 4xx entries are cached as known misses.
    #[serde(default = "ok_status")]
    pub status: u16,
    pub fetched_at: String,
    pub body: String,
    pub extractor_version: u32,
    /// Extraction output for `extractor_version`; recomputed from `body` when stale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_text: Option<String>,
}

fn ok_status() -> u16 {
    200
}

/// Lowercases scheme and host, drops the fragment and default port.
pub fn normalize_url(raw: &str) -> String {
    match url::Url::parse(raw.trim()) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => raw.trim().to_string(),
    }
}

pub fn cache_key(url: &str) -> String {
    hex::encode(Sha256::digest(normalize_url(url).as_bytes()))
}

#[derive(Debug, Clone)]
pub struct PageCache {
    root: PathBuf,
}

impl PageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, domain: &str, url: &str) -> PathBuf {
        self.root
            .join(domain)
            .join(format!("{}.json", cache_key(url)))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, domain: &str, url: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path_for(domain, url)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Writes via a temporary file in the target directory, then renames.
    pub fn put(&self, domain: &str, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(domain, &entry.url);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, entry)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
