//! Crawl-record ingestion: WARC response records or JSONL fixtures in,
//! validated [`CrawlRecord`]s out, plus deterministic sharding.

mod jsonl;
mod warc;

pub use jsonl::{read_jsonl, JsonlReader};
pub use warc::{read_warc, WarcReader};

use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::hashing::fnv1a64_str;

/// One fetched web page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlRecord {
    pub id: String,
    pub url: String,
    #[serde(rename = "snapshot")]
    pub snapshot_id: String,
    #[serde(rename = "timestamp")]
    pub fetch_time: DateTime<Utc>,
    #[serde(default = "default_content_type")]
    pub content_type: String,
    pub html: String,
}

fn default_content_type() -> String {
    "text/html".to_string()
}

impl CrawlRecord {
    /// Builds a record, checking the URL and snapshot invariants.
    pub fn new(
        id: impl Into<String>,
        url: impl Into<String>,
        snapshot_id: impl Into<String>,
        fetch_time: DateTime<Utc>,
        content_type: impl Into<String>,
        html: impl Into<String>,
    ) -> Result<Self, String> {
        let rec = CrawlRecord {
            id: id.into(),
            url: url.into(),
            snapshot_id: snapshot_id.into(),
            fetch_time,
            content_type: content_type.into(),
            html: html.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match url::Url::parse(&self.url) {
            Ok(u) if u.scheme() == "http" || u.scheme() == "https" => {}
            Ok(u) => return Err(format!("url scheme `{}` is not http(s): {}", u.scheme(), self.url)),
            Err(e) => return Err(format!("url `{}` is not absolute: {e}", self.url)),
        }
        if !is_snapshot_id(&self.snapshot_id) {
            return Err(format!("snapshot id `{}` does not match CC-MAIN-YYYY-WW", self.snapshot_id));
        }
        Ok(())
    }
}

/// `CC-MAIN-\d{4}-\d{2}`
pub fn is_snapshot_id(s: &str) -> bool {
    let Some(rest) = s.strip_prefix("CC-MAIN-") else {
        return false;
    };
    let b = rest.as_bytes();
    b.len() == 7 && b[4] == b'-' && b[..4].iter().chain(&b[5..]).all(u8::is_ascii_digit)
}

/// Calendar year of a snapshot id, e.g. 2023 for `CC-MAIN-2023-06`.
pub fn snapshot_year(s: &str) -> Option<u32> {
    if !is_snapshot_id(s) {
        return None;
    }
    s[8..12].parse().ok()
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed WARC record at byte {offset}: {reason}")]
    MalformedRecord { offset: u64, reason: String },
    #[error("truncated WARC record at byte {offset}: expected {expected} payload bytes, got {got}")]
    Truncated { offset: u64, expected: u64, got: u64 },
    #[error("invalid record at byte {offset}: {reason}")]
    InvalidWarcRecord { offset: u64, reason: String },
    #[error("line {line}: invalid JSON: {reason}")]
    InvalidJson { line: u64, reason: String },
    #[error("line {line}: missing required key `{key}`")]
    MissingKey { line: u64, key: &'static str },
    #[error("line {line}: {reason}")]
    InvalidLine { line: u64, reason: String },
    #[error("read error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("n_shards must be at least 1")]
    ZeroShards,
}

impl IngestError {
    /// Terminal errors end the stream; all others are per-record.
    pub fn is_terminal(&self) -> bool {
        matches!(self, IngestError::Truncated { .. } | IngestError::Io { .. })
    }
}

/// Reader counters. `records_in == yielded + skipped() + errors` always holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderStats {
    pub records_in: u64,
    pub yielded: u64,
    pub skipped_non_response: u64,
    pub skipped_non_html: u64,
    pub errors: u64,
}

impl ReaderStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_non_response + self.skipped_non_html
    }

    pub fn is_conserved(&self) -> bool {
        self.records_in == self.yielded + self.skipped() + self.errors
    }
}

pub(crate) fn is_html_content_type(ct: &str) -> bool {
    ct.trim_start().to_ascii_lowercase().starts_with("text/html")
}

/// Anything that carries a run-unique id.
pub trait Keyed {
    fn key(&self) -> &str;
}

impl Keyed for CrawlRecord {
    fn key(&self) -> &str {
        &self.id
    }
}

impl Keyed for crate::doc::InterleavedDoc {
    fn key(&self) -> &str {
        &self.id
    }
}

/// Shard index of an id: FNV-1a of the id modulo `n_shards`.
pub fn shard_index(id: &str, n_shards: usize) -> usize {
    (fnv1a64_str(id) % n_shards as u64) as usize
}

/// Splits items into `n_shards` sequences by stable hash of their id,
/// preserving relative input order within each shard.
pub fn shard<T: Keyed>(items: impl IntoIterator<Item = T>, n_shards: usize) -> Result<Vec<Vec<T>>, IngestError> {
    if n_shards == 0 {
        return Err(IngestError::ZeroShards);
    }
    let mut shards: Vec<Vec<T>> = (0..n_shards).map(|_| Vec::new()).collect();
    for item in items {
        let i = shard_index(item.key(), n_shards);
        shards[i].push(item);
    }
    Ok(shards)
}

/// Writes records in the JSONL input schema, one per line.
pub fn write_jsonl<W: Write>(mut out: W, records: &[CrawlRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
