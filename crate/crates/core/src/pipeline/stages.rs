//! One function per stage: documents in, survivors plus drop records out.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{InputConfig, InputFormat};
use crate::classifier::{ClassifierError, LinearTextClassifier};
use crate::dedup::{self, DedupDrop, DedupError, Keeper, MinHashParams, SignatureCache};
use crate::doc::InterleavedDoc;
use crate::extract::{extract_document, Extracted};
use crate::images::{self, filter_image_urls, url_stats, ImageFilterConfig};
use crate::ingest::{read_jsonl, read_warc, CrawlRecord, IngestError, ReaderStats};
use crate::langid::{language_gate, LangGateConfig};
use crate::mathfilter::{math_gate, MathGateConfig};
use crate::rules::{apply_rules, RuleConfig};

/// One dropped document (or unreadable input record) with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

impl DropRecord {
    pub fn new(id: impl Into<String>, reason: impl Into<String>, detail: serde_json::Value) -> Self {
        DropRecord { id: id.into(), reason: reason.into(), detail }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<T> {
    pub kept: Vec<T>,
    pub drops: Vec<DropRecord>,
    /// Drops known only by count, such as skipped WARC records.
    pub uncounted_drops: BTreeMap<String, u64>,
    pub counters: BTreeMap<String, u64>,
}

impl<T> StageOutput<T> {
    fn new(kept: Vec<T>, drops: Vec<DropRecord>) -> Self {
        StageOutput { kept, drops, uncounted_drops: BTreeMap::new(), counters: BTreeMap::new() }
    }

    pub fn drops_by_reason(&self) -> BTreeMap<String, u64> {
        let mut m = self.uncounted_drops.clone();
        for d in &self.drops {
            *m.entry(d.reason.clone()).or_insert(0) += 1;
        }
        m
    }
}

fn partition<T: Send>(items: Vec<(T, Option<DropRecord>)>) -> StageOutput<T> {
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (item, drop) in items {
        match drop {
            Some(d) => drops.push(d),
            None => kept.push(item),
        }
    }
    StageOutput::new(kept, drops)
}

fn add_stats(into: &mut ReaderStats, s: &ReaderStats) {
    into.records_in += s.records_in;
    into.yielded += s.yielded;
    into.skipped_non_response += s.skipped_non_response;
    into.skipped_non_html += s.skipped_non_html;
    into.errors += s.errors;
}

/// Reads every source, drops unreadable records and repeated ids (first
/// occurrence wins), and returns records sorted by id. A terminal read
/// error fails the stage.
pub fn ingest(input: &InputConfig) -> Result<StageOutput<CrawlRecord>, IngestError> {
    let mut records = Vec::new();
    let mut drops = Vec::new();
    let mut stats = ReaderStats::default();
    for src in &input.sources {
        let name = src.path.display().to_string();
        let open = |offset| File::open(&src.path).map_err(|source| IngestError::Io { offset, source });
        let mut handle = |item: Result<CrawlRecord, IngestError>, n: usize| -> Result<(), IngestError> {
            match item {
                Ok(r) => records.push(r),
                Err(e) if e.is_terminal() => return Err(e),
                Err(e) => drops.push(DropRecord::new(format!("{name}#{n}"), "invalid_record", json!(e.to_string()))),
            }
            Ok(())
        };
        match input.format {
            InputFormat::Jsonl => {
                let mut reader = read_jsonl(BufReader::new(open(0)?), src.snapshot.as_deref());
                for (n, item) in reader.by_ref().enumerate() {
                    handle(item, n)?;
                }
                add_stats(&mut stats, reader.stats());
            }
            InputFormat::Warc => {
                let snapshot = src.snapshot.as_deref().unwrap_or_default();
                let mut reader = read_warc(open(0)?, snapshot)?;
                for (n, item) in reader.by_ref().enumerate() {
                    handle(item, n)?;
                }
                add_stats(&mut stats, reader.stats());
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for r in records {
        if seen.insert(r.id.clone()) {
            kept.push(r);
        } else {
            drops.push(DropRecord::new(r.id.clone(), "duplicate_id", json!({"url": r.url})));
        }
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = StageOutput::new(kept, drops);
    for (k, v) in [("skipped_non_response", stats.skipped_non_response), ("skipped_non_html", stats.skipped_non_html)] {
        if v > 0 {
            out.uncounted_drops.insert(k.to_string(), v);
        }
    }
    out.counters.insert("records_read".into(), stats.records_in);
    Ok(out)
}

pub fn extract(records: Vec<CrawlRecord>) -> StageOutput<InterleavedDoc> {
    let results: Vec<Result<InterleavedDoc, DropRecord>> = records
        .par_iter()
        .map(|r| match extract_document(r) {
            Ok(Extracted::Doc(d)) => Ok(d),
            Ok(Extracted::Rejected(why)) => Err(DropRecord::new(r.id.clone(), why.to_string(), serde_json::Value::Null)),
            Err(e) => Err(DropRecord::new(r.id.clone(), "extract_error", json!(e.to_string()))),
        })
        .collect();
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for r in results {
        match r {
            Ok(d) => kept.push(d),
            Err(d) => drops.push(d),
        }
    }
    StageOutput::new(kept, drops)
}

pub fn language(
    docs: Vec<InterleavedDoc>,
    model: &LinearTextClassifier,
    cfg: &LangGateConfig,
) -> Result<StageOutput<InterleavedDoc>, ClassifierError> {
    let results: Vec<(InterleavedDoc, Option<DropRecord>)> = docs
        .into_par_iter()
        .map(|mut d| {
            let dec = language_gate(&mut d, model, cfg)?;
            let drop = dec.drop.map(|why| {
                DropRecord::new(
                    d.id.clone(),
                    why.as_str(),
                    json!({"language": dec.prediction.language, "prob": dec.prediction.prob}),
                )
            });
            Ok((d, drop))
        })
        .collect::<Result<_, ClassifierError>>()?;
    Ok(partition(results))
}

/// Math gate stage; the score is recorded under `stage_name` on every doc.
pub fn math(
    docs: Vec<InterleavedDoc>,
    model: &LinearTextClassifier,
    threshold: f64,
    stage_name: &str,
    cfg: &MathGateConfig,
) -> Result<StageOutput<InterleavedDoc>, ClassifierError> {
    let results: Vec<(InterleavedDoc, Option<DropRecord>)> = docs
        .into_par_iter()
        .map(|mut d| {
            let dec = math_gate(&mut d, model, threshold, stage_name, cfg)?;
            let drop = (!dec.keep)
                .then(|| DropRecord::new(d.id.clone(), "below_threshold", json!({"score": dec.score, "threshold": threshold})));
            Ok((d, drop))
        })
        .collect::<Result<_, ClassifierError>>()?;
    Ok(partition(results))
}

fn dedup_drop_record(d: DedupDrop) -> DropRecord {
    DropRecord::new(
        d.dropped_id,
        "near_duplicate",
        json!({"kept_id": d.kept_id, "shared_bands": d.shared_bands, "exact": d.exact}),
    )
}

/// Loads the cache when the file exists, adds signatures for `docs`, and
/// writes it back.
fn refresh_cache(path: &Path, params: &MinHashParams, docs: &[InterleavedDoc]) -> Result<SignatureCache, DedupError> {
    let mut cache = if path.exists() { SignatureCache::load(path)? } else { SignatureCache::new(*params) };
    if cache.params() != params {
        log::info!("signature cache {} was built with other parameters; rebuilding", path.display());
        cache = SignatureCache::new(*params);
    }
    let texts: Vec<String> = docs.iter().map(InterleavedDoc::plain_text).collect();
    let added = cache.fill(texts.iter().map(String::as_str))?;
    if added > 0 {
        cache.save(path)?;
    }
    Ok(cache)
}

pub fn dedup_within(
    docs: Vec<InterleavedDoc>,
    params: &MinHashParams,
    keeper: Keeper,
    cache_path: Option<&Path>,
) -> Result<StageOutput<InterleavedDoc>, DedupError> {
    let cache = cache_path.map(|p| refresh_cache(p, params, &docs)).transpose()?;
    let out = dedup::dedup_within_snapshots(docs, params, keeper, cache.as_ref())?;
    let mut drops: Vec<DropRecord> = out.drops.into_iter().map(dedup_drop_record).collect();
    drops.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(StageOutput::new(out.survivors, drops))
}

pub fn dedup_neighbors(
    docs: Vec<InterleavedDoc>,
    params: &MinHashParams,
    keeper: Keeper,
    cache_path: Option<&Path>,
) -> Result<StageOutput<InterleavedDoc>, DedupError> {
    let cache = cache_path.map(|p| refresh_cache(p, params, &docs)).transpose()?;
    let out = dedup::dedup_neighbor_pairs(docs, params, keeper, cache.as_ref())?;
    let mut drops: Vec<DropRecord> = out.drops.into_iter().map(dedup_drop_record).collect();
    drops.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(StageOutput::new(out.survivors, drops))
}

pub fn url_dedup(docs: Vec<InterleavedDoc>) -> StageOutput<InterleavedDoc> {
    let out = dedup::url_dedup(docs);
    let drops = out
        .drops
        .into_iter()
        .map(|d| DropRecord::new(d.dropped_id, "url_duplicate", json!({"kept_id": d.kept_id, "url": d.url, "year": d.year})))
        .collect();
    StageOutput::new(out.survivors, drops)
}

pub fn rules(docs: Vec<InterleavedDoc>, cfg: &RuleConfig) -> StageOutput<InterleavedDoc> {
    let results: Vec<(InterleavedDoc, Option<DropRecord>)> = docs
        .into_par_iter()
        .map(|d| {
            let drop = apply_rules(&d, cfg).map(|rule| DropRecord::new(d.id.clone(), rule.as_str(), serde_json::Value::Null));
            (d, drop)
        })
        .collect();
    partition(results)
}

/// URL statistics are reduced over per-shard partials, then each doc is
/// filtered. Docs left with no slots are dropped.
pub fn images_filter(
    docs: Vec<InterleavedDoc>,
    cfg: &ImageFilterConfig,
    n_shards: usize,
) -> (StageOutput<InterleavedDoc>, BTreeMap<String, usize>) {
    let chunk = docs.len().div_ceil(n_shards.max(1)).max(1);
    let partials: Vec<BTreeMap<String, usize>> = docs.par_chunks(chunk).map(|c| url_stats(c)).collect();
    let mut stats = BTreeMap::new();
    for p in partials {
        images::merge_stats(&mut stats, p);
    }
    let results: Vec<(InterleavedDoc, Vec<images::RemovedImage>)> =
        docs.into_par_iter().map(|d| filter_image_urls(d, &stats, cfg)).collect();
    let mut counters = BTreeMap::new();
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (d, removed) in results {
        for r in &removed {
            *counters.entry(format!("images_removed_{}", r.reason.as_str())).or_insert(0) += 1;
        }
        if d.is_empty() {
            drops.push(DropRecord::new(d.id.clone(), "empty_after_image_filter", json!({"removed": removed})));
        } else {
            kept.push(d);
        }
    }
    let mut out = StageOutput::new(kept, drops);
    out.counters = counters;
    out.counters.insert("distinct_urls_in".into(), stats.len() as u64);
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::{doc, text_doc};

    #[test]
    fn image_filter_drops_emptied_docs() {
        let a = doc("a", &[None], &[Some("http://x.org/a.png")]);
        let b = doc("b", &[Some("t"), None], &[None, Some("https://x.org/logo.png")]);
        let (out, stats) = images_filter(vec![a, b], &ImageFilterConfig::default(), 3);
        assert_eq!(stats.len(), 2);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.drops[0].reason, "empty_after_image_filter");
        assert_eq!(out.counters["images_removed_not_https"], 1);
        assert_eq!(out.counters["images_removed_keyword"], 1);
    }

    #[test]
    fn rule_drops_carry_rule_name() {
        let mut d = text_doc("x", "short lorem ipsum");
        d.language = Some("en".into());
        let out = rules(vec![d, text_doc("y", "fine text")], &RuleConfig::default());
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.drops_by_reason(), BTreeMap::from([("lorem".to_string(), 1)]));
    }
}
