//! Image URL statistics and filtering, the download manifest, and
//! reintegration of downloaded files into documents.

mod download;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::doc::InterleavedDoc;

pub use download::{download, local_path_for, sha256_hex, DownloadOptions, DownloadSummary};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("manifest lists {0} more than once")]
    DuplicateUrl(String),
    #[error("manifest is missing {} corpus URL(s): {}", .0.len(), .0.join(", "))]
    MissingUrls(Vec<String>),
    #[error("manifest has {} entries without a final status: {}", .0.len(), .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("invalid download options: {0}")]
    Options(String),
    #[error("manifest line {line}: {reason}")]
    BadManifestLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFilterConfig {
    pub max_url_freq: usize,
    pub max_images_per_doc: usize,
    pub require_https: bool,
    pub keyword_blocklist: Vec<String>,
}

impl Default for ImageFilterConfig {
    fn default() -> Self {
        ImageFilterConfig {
            max_url_freq: 10,
            max_images_per_doc: 100,
            require_https: true,
            keyword_blocklist: ["logo", "banner", "avatar", "icon"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ImageFilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_url_freq < 1 {
            return Err("max_url_freq must be >= 1".into());
        }
        if self.max_images_per_doc < 1 {
            return Err("max_images_per_doc must be >= 1".into());
        }
        Ok(())
    }
}

/// Occurrences of each image URL over all image slots of the corpus.
pub fn url_stats<'a>(docs: impl IntoIterator<Item = &'a InterleavedDoc>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for d in docs {
        for u in d.image_urls() {
            *m.entry(u.to_string()).or_insert(0) += 1;
        }
    }
    m
}

pub fn merge_stats(into: &mut BTreeMap<String, usize>, part: BTreeMap<String, usize>) {
    for (k, v) in part {
        *into.entry(k).or_insert(0) += v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageDropReason {
    NotHttps,
    Keyword,
    DocImageCount,
    UrlFrequency,
}

impl ImageDropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageDropReason::NotHttps => "not_https",
            ImageDropReason::Keyword => "keyword",
            ImageDropReason::DocImageCount => "doc_image_count",
            ImageDropReason::UrlFrequency => "url_frequency",
        }
    }
}

/// First rule, in reporting order, that removes `url` from a doc holding
/// `doc_images` image slots.
pub fn image_drop_reason(
    url: &str,
    doc_images: usize,
    stats: &BTreeMap<String, usize>,
    cfg: &ImageFilterConfig,
) -> Option<ImageDropReason> {
    let lower = url.to_lowercase();
    if cfg.require_https && !lower.starts_with("https://") {
        return Some(ImageDropReason::NotHttps);
    }
    if cfg.keyword_blocklist.iter().any(|k| lower.contains(&k.to_lowercase())) {
        return Some(ImageDropReason::Keyword);
    }
    if doc_images > cfg.max_images_per_doc {
        return Some(ImageDropReason::DocImageCount);
    }
    if stats.get(url).copied().unwrap_or(0) > cfg.max_url_freq {
        return Some(ImageDropReason::UrlFrequency);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedImage {
    pub url: String,
    pub reason: ImageDropReason,
}

/// Deletes offending image slots from both parallel lists. Surrounding text
/// slots are left as they are.
pub fn filter_image_urls(
    mut doc: InterleavedDoc,
    stats: &BTreeMap<String, usize>,
    cfg: &ImageFilterConfig,
) -> (InterleavedDoc, Vec<RemovedImage>) {
    let n_images = doc.image_count();
    let mut removed = Vec::new();
    let mut i = 0;
    while i < doc.len() {
        let reason = doc.images[i].as_deref().and_then(|u| image_drop_reason(u, n_images, stats, cfg));
        match reason {
            Some(reason) => {
                removed.push(RemovedImage { url: doc.images[i].clone().unwrap(), reason });
                doc.remove_slot(i);
            }
            None => i += 1,
        }
    }
    (doc, removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DownloadStatus {
    Pending,
    Ok { local_path: String, sha256: String, bytes: u64 },
    Failed { reason: FailureReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureReason {
    Timeout,
    HttpStatus(u16),
    TooLarge,
    BadContentType,
    Io,
}

impl FailureReason {
    /// Failures that another attempt cannot fix.
    pub fn is_permanent(self) -> bool {
        matches!(self, FailureReason::TooLarge | FailureReason::BadContentType)
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::Timeout => f.write_str("timeout"),
            FailureReason::HttpStatus(n) => write!(f, "http_status({n})"),
            FailureReason::TooLarge => f.write_str("too_large"),
            FailureReason::BadContentType => f.write_str("bad_content_type"),
            FailureReason::Io => f.write_str("io"),
        }
    }
}

impl std::str::FromStr for FailureReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "timeout" => FailureReason::Timeout,
            "too_large" => FailureReason::TooLarge,
            "bad_content_type" => FailureReason::BadContentType,
            "io" => FailureReason::Io,
            _ => {
                let n = s
                    .strip_prefix("http_status(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| format!("unknown failure reason `{s}`"))?;
                FailureReason::HttpStatus(n)
            }
        })
    }
}

impl Serialize for FailureReason {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FailureReason {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub url: String,
    /// SHA-256 of the stored bytes once downloaded.
    pub content_hash: Option<String>,
    pub doc_ids: Vec<String>,
    pub status: DownloadStatus,
    #[serde(default)]
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DownloadManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DownloadManifest {
    pub fn validate(&self) -> Result<(), ImageError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.url.as_str()) {
                return Err(ImageError::DuplicateUrl(e.url.clone()));
            }
        }
        Ok(())
    }

    pub fn ok_count(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e.status, DownloadStatus::Ok { .. })).count()
    }

    pub fn failed_count(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e.status, DownloadStatus::Failed { .. })).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, ImageError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|e| ImageError::BadManifestLine { line: i + 1, reason: e.to_string() })?;
            entries.push(e);
        }
        let m = DownloadManifest { entries };
        m.validate()?;
        Ok(m)
    }
}

/// One pending entry per distinct image URL, sorted by URL, listing every
/// referencing doc id.
pub fn build_manifest<'a>(docs: impl IntoIterator<Item = &'a InterleavedDoc>) -> DownloadManifest {
    let mut refs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for d in docs {
        for u in d.image_urls() {
            refs.entry(u).or_default().insert(d.id.as_str());
        }
    }
    DownloadManifest {
        entries: refs
            .into_iter()
            .map(|(url, ids)| ManifestEntry {
                url: url.to_string(),
                content_hash: None,
                doc_ids: ids.into_iter().map(str::to_string).collect(),
                status: DownloadStatus::Pending,
                attempts: 0,
            })
            .collect(),
    }
}

pub const IMAGE_SLOTS_META: &str = "image_slots";

/// Annotates each doc with `meta.image_slots`, parallel to its slots: null
/// for text slots, `{url, local_path, status}` for images. Failed downloads
/// keep their slot with a null path.
pub fn reintegrate(docs: Vec<InterleavedDoc>, manifest: &DownloadManifest) -> Result<Vec<InterleavedDoc>, ImageError> {
    manifest.validate()?;
    let by_url: BTreeMap<&str, &ManifestEntry> = manifest.entries.iter().map(|e| (e.url.as_str(), e)).collect();
    let mut missing = BTreeSet::new();
    let mut pending = BTreeSet::new();
    for u in docs.iter().flat_map(|d| d.image_urls()) {
        match by_url.get(u) {
            None => {
                missing.insert(u.to_string());
            }
            Some(e) if e.status == DownloadStatus::Pending => {
                pending.insert(u.to_string());
            }
            _ => {}
        }
    }
    if !missing.is_empty() {
        return Err(ImageError::MissingUrls(missing.into_iter().collect()));
    }
    if !pending.is_empty() {
        return Err(ImageError::Incomplete(pending.into_iter().collect()));
    }
    Ok(docs
        .into_iter()
        .map(|mut d| {
            if d.image_count() == 0 {
                return d;
            }
            let slots: Vec<serde_json::Value> = d
                .images
                .iter()
                .map(|img| match img {
                    None => serde_json::Value::Null,
                    Some(u) => match &by_url[u.as_str()].status {
                        DownloadStatus::Ok { local_path, .. } => {
                            json!({"url": u, "local_path": local_path, "status": "ok"})
                        }
                        DownloadStatus::Failed { reason } => {
                            json!({"url": u, "local_path": null, "status": format!("failed:{reason}")})
                        }
                        DownloadStatus::Pending => unreachable!("pending entries rejected above"),
                    },
                })
                .collect();
            d.meta.insert(IMAGE_SLOTS_META.to_string(), serde_json::Value::Array(slots));
            d
        })
        .collect())
}
