//! Concurrent image fetching with per-host limits, retries and
//! content-addressed storage.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{DownloadManifest, DownloadStatus, FailureReason, ImageError, ManifestEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct DownloadOptions {
    pub concurrency: usize,
    pub per_host_limit: usize,
    pub timeout: Duration,
    pub max_bytes: u64,
    pub retries: u32,
    pub user_agent: String,
}

impl Default for DownloadOptions {
    fn default() -> Self {
        DownloadOptions {
            concurrency: 16,
            per_host_limit: 4,
            timeout: Duration::from_secs(10),
            max_bytes: 10 * 1024 * 1024,
            retries: 2,
            user_agent: concat!("mathcrawl/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

impl DownloadOptions {
    pub fn validate(&self) -> Result<(), ImageError> {
        if self.concurrency == 0 || self.per_host_limit == 0 {
            return Err(ImageError::Options("concurrency and per_host_limit must be >= 1".into()));
        }
        if self.max_bytes == 0 || self.timeout.is_zero() {
            return Err(ImageError::Options("max_bytes and timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DownloadSummary {
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
    pub failures: HashMap<String, usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn extension(url: &str, content_type: &str) -> String {
    let from_path = url::Url::parse(url).ok().and_then(|u| {
        let last = u.path_segments()?.next_back()?.to_string();
        let (_, ext) = last.rsplit_once('.')?;
        let ext = ext.to_ascii_lowercase();
        (!ext.is_empty() && ext.len() <= 5 && ext.chars().all(|c| c.is_ascii_alphanumeric())).then_some(ext)
    });
    from_path
        .or_else(|| {
            let sub = content_type.split(';').next()?.trim().strip_prefix("image/")?;
            let sub = sub.split('+').next()?.to_ascii_lowercase();
            (!sub.is_empty() && sub.chars().all(|c| c.is_ascii_alphanumeric())).then(|| match sub.as_str() {
                "jpeg" => "jpg".to_string(),
                _ => sub,
            })
        })
        .unwrap_or_else(|| "bin".to_string())
}

/// Relative storage path: `images/<first two hex chars>/<sha256>.<ext>`.
pub fn local_path_for(sha256: &str, url: &str, content_type: &str) -> String {
    format!("images/{}/{}.{}", &sha256[..2], sha256, extension(url, content_type))
}

fn host_of(url: &str) -> String {
    url::Url::parse(url).ok().and_then(|u| u.host_str().map(str::to_string)).unwrap_or_default()
}

struct HostGate {
    limit: usize,
    active: Mutex<HashMap<String, usize>>,
    cv: Condvar,
}

impl HostGate {
    fn acquire(&self, host: &str) {
        let mut m = self.active.lock().unwrap();
        while m.get(host).copied().unwrap_or(0) >= self.limit {
            m = self.cv.wait(m).unwrap();
        }
        *m.entry(host.to_string()).or_insert(0) += 1;
    }

    fn release(&self, host: &str) {
        let mut m = self.active.lock().unwrap();
        if let Some(n) = m.get_mut(host) {
            *n -= 1;
        }
        self.cv.notify_all();
    }
}

fn fetch_once(agent: &ureq::Agent, url: &str, max_bytes: u64) -> Result<(Vec<u8>, String), FailureReason> {
    let mut resp = agent.get(url).call().map_err(classify)?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(FailureReason::HttpStatus(status));
    }
    let ct = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    if !ct.trim_start().starts_with("image/") {
        return Err(FailureReason::BadContentType);
    }
    if let Some(len) = resp.headers().get("content-length").and_then(|v| v.to_str().ok()?.parse::<u64>().ok()) {
        if len > max_bytes {
            return Err(FailureReason::TooLarge);
        }
    }
    let bytes = resp.body_mut().with_config().limit(max_bytes).read_to_vec().map_err(classify)?;
    Ok((bytes, ct))
}

fn classify(e: ureq::Error) -> FailureReason {
    match e {
        ureq::Error::Timeout(_) => FailureReason::Timeout,
        ureq::Error::StatusCode(n) => FailureReason::HttpStatus(n),
        ureq::Error::BodyExceedsLimit(_) => FailureReason::TooLarge,
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => FailureReason::Timeout,
        _ => FailureReason::Io,
    }
}

fn store(out_dir: &Path, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
    let dest = out_dir.join(rel);
    let dir = dest.parent().expect("storage path has a parent");
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.{:?}.part", std::process::id(), std::thread::current().id()));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, &dest)
}

fn already_stored(out_dir: &Path, entry: &ManifestEntry) -> bool {
    match &entry.status {
        DownloadStatus::Ok { local_path, sha256, .. } => std::fs::read(out_dir.join(local_path))
            .map(|b| &sha256_hex(&b) == sha256)
            .unwrap_or(false),
        _ => false,
    }
}

fn fetch_entry(agent: &ureq::Agent, gate: &HostGate, out_dir: &Path, entry: &mut ManifestEntry, opts: &DownloadOptions) {
    let host = host_of(&entry.url);
    let mut last = FailureReason::Io;
    for _ in 0..=opts.retries {
        entry.attempts += 1;
        gate.acquire(&host);
        let res = fetch_once(agent, &entry.url, opts.max_bytes);
        gate.release(&host);
        match res {
            Ok((bytes, ct)) => {
                let sha = sha256_hex(&bytes);
                let rel = local_path_for(&sha, &entry.url, &ct);
                if let Err(e) = store(out_dir, &rel, &bytes) {
                    log::warn!("storing {}: {e}", entry.url);
                    last = FailureReason::Io;
                    continue;
                }
                entry.content_hash = Some(sha.clone());
                entry.status = DownloadStatus::Ok { local_path: rel, sha256: sha, bytes: bytes.len() as u64 };
                return;
            }
            Err(r) => {
                log::debug!("fetching {} failed: {r}", entry.url);
                last = r;
                if r.is_permanent() {
                    break;
                }
            }
        }
    }
    entry.status = DownloadStatus::Failed { reason: last };
}

/// Downloads every entry not already stored under `out_dir`, updating the
/// manifest in place.
pub fn download(manifest: &mut DownloadManifest, out_dir: &Path, opts: &DownloadOptions) -> Result<DownloadSummary, ImageError> {
    opts.validate()?;
    manifest.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(opts.timeout))
        .max_redirects(5)
        .http_status_as_error(false)
        .user_agent(&opts.user_agent)
        .build()
        .into();
    let gate = HostGate { limit: opts.per_host_limit, active: Mutex::new(HashMap::new()), cv: Condvar::new() };

    let mut skipped = 0;
    let mut todo: Vec<&mut ManifestEntry> = Vec::new();
    for e in manifest.entries.iter_mut() {
        if already_stored(out_dir, e) {
            skipped += 1;
        } else {
            e.status = DownloadStatus::Pending;
            e.content_hash = None;
            todo.push(e);
        }
    }
    let slots: Vec<Mutex<&mut ManifestEntry>> = todo.into_iter().map(Mutex::new).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.min(slots.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(slot) = slots.get(i) else { break };
                let mut entry = slot.lock().unwrap();
                fetch_entry(&agent, &gate, out_dir, &mut entry, opts);
            });
        }
    });

    let mut summary = DownloadSummary { skipped, ..Default::default() };
    for e in &manifest.entries {
        match &e.status {
            DownloadStatus::Ok { .. } => summary.ok += 1,
            DownloadStatus::Failed { reason } => {
                summary.failed += 1;
                *summary.failures.entry(reason.to_string()).or_insert(0) += 1;
            }
            DownloadStatus::Pending => {}
        }
    }
    summary.ok -= summary.skipped.min(summary.ok);
    Ok(summary)
}
