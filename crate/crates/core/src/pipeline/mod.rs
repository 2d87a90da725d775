//! End-to-end orchestration of the curation stages from one config.
//!
//! Each stage writes its survivors as JSONL shards plus a `drops.jsonl` log
//! under `<output>/partial/NN_<stage>/`. When every stage succeeds the tree
//! moves to `<output>/stages/`; after a failure it stays in `partial/`. The
//! final corpus goes to `<output>/corpus/` and the funnel report to
//! `<output>/report.json`.

pub mod config;
pub mod io;
pub mod report;
pub mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{validate, ConfigError, PipelineConfig};
pub use io::{read_docs, read_shards, write_shards, CorpusIoError};
pub use report::{funnel_report, FunnelReport, FunnelRow, StageStats};
pub use stages::{DropRecord, StageOutput};

use crate::classifier::LinearTextClassifier;
use crate::doc::InterleavedDoc;
use crate::images::{self, DownloadManifest};
use crate::ingest::Keyed;
use crate::mathfilter::{PRECISION_STAGE, RECALL_STAGE};

/// Every stage, in execution order.
pub const STAGE_ORDER: [&str; 13] = [
    "ingest",
    "extract",
    "language_gate",
    "math_recall",
    "dedup_within_snapshot",
    "dedup_neighbor_pairs",
    "url_dedup",
    "rules",
    "math_precision",
    "images_filter",
    "build_manifest",
    "download",
    "reintegrate",
];

pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DROPS_FILE: &str = "drops.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl PipelineError {
    fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage: stage.to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: FunnelReport,
    pub corpus_dir: PathBuf,
    pub manifest: Option<DownloadManifest>,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    stats: Vec<StageStats>,
}

impl Runner<'_> {
    fn partial_dir(&self, name: &str) -> PathBuf {
        self.cfg.output.join("partial").join(format!("{:02}_{name}", self.stats.len()))
    }

    /// Persists a finished stage and records its stats.
    fn finish<T: Serialize + Keyed>(
        &mut self,
        name: &str,
        docs_in: u64,
        started: Instant,
        out: &StageOutput<T>,
        extra_files: &[(&str, &dyn Fn(&Path) -> Result<(), CorpusIoError>)],
    ) -> Result<(), PipelineError> {
        let mut s = StageStats::new(name);
        s.docs_in = docs_in;
        s.docs_out = out.kept.len() as u64;
        s.drops_by_reason = out.drops_by_reason();
        s.counters = out.counters.clone();
        if !s.is_conserved() {
            return Err(PipelineError::stage(
                name,
                format!("conservation violated: {} in, {} out, {} dropped", s.docs_in, s.docs_out, s.dropped()),
            ));
        }
        let partial = self.partial_dir(name);
        let write = || -> Result<(), CorpusIoError> {
            io::write_shards(&partial, &out.kept, self.cfg.n_shards)?;
            io::write_lines(&partial.join(DROPS_FILE), &out.drops)?;
            for (file, f) in extra_files {
                f(&partial.join(file))?;
            }
            Ok(())
        };
        write().map_err(|e| PipelineError::stage(name, e))?;
        s.wall_time_s = started.elapsed().as_secs_f64();
        log::info!("{name}: {} -> {} in {:.2}s", s.docs_in, s.docs_out, s.wall_time_s);
        self.stats.push(s);
        Ok(())
    }
}

fn load_model(stage: &str, path: &Option<PathBuf>) -> Result<LinearTextClassifier, PipelineError> {
    let path = path.as_ref().ok_or_else(|| PipelineError::stage(stage, "no model configured"))?;
    LinearTextClassifier::load(path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

fn clear(dir: &Path) -> Result<(), PipelineError> {
    match std::fs::remove_dir_all(dir) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(PipelineError::stage("setup", format!("{}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

/// Runs every enabled stage in order and writes the corpus and report.
/// Outputs of a previous run under the same root are replaced; downloaded
/// images are kept and reused.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let violations = validate(cfg);
    if !violations.is_empty() {
        return Err(PipelineError::Invalid(violations));
    }
    let root = &cfg.output;
    for d in ["partial", "stages", "corpus"] {
        clear(&root.join(d))?;
    }
    let _ = std::fs::remove_file(root.join(REPORT_FILE));
    std::fs::create_dir_all(root).map_err(|e| PipelineError::stage("setup", e))?;
    let st = &cfg.stage;
    let mut r = Runner { cfg, stats: Vec::new() };

    let t = Instant::now();
    let out = stages::ingest(&cfg.input).map_err(|e| PipelineError::stage("ingest", e))?;
    let read = out.counters["records_read"];
    r.finish("ingest", read, t, &out, &[])?;

    let t = Instant::now();
    let n = out.kept.len() as u64;
    let out = stages::extract(out.kept);
    r.finish("extract", n, t, &out, &[])?;
    let mut docs = out.kept;

    macro_rules! doc_stage {
        ($name:expr, $body:expr) => {{
            let t = Instant::now();
            let n = docs.len() as u64;
            let out: StageOutput<InterleavedDoc> = $body(std::mem::take(&mut docs)).map_err(|e| PipelineError::stage($name, e))?;
            r.finish($name, n, t, &out, &[])?;
            docs = out.kept;
        }};
    }

    if st.language_gate.enabled {
        let model = load_model("language_gate", &cfg.models.langid)?;
        let gate = st.language_gate.gate_config();
        doc_stage!("language_gate", |d| stages::language(d, &model, &gate));
    }
    if st.math_recall.enabled {
        let model = load_model("math_recall", &cfg.models.math_recall)?;
        let sec = &st.math_recall;
        doc_stage!("math_recall", |d| stages::math(d, &model, sec.threshold, RECALL_STAGE, &sec.gate_config()));
    }
    if st.dedup_within_snapshot.enabled {
        let sec = &st.dedup_within_snapshot;
        let params = sec.params(cfg.seed);
        doc_stage!("dedup_within_snapshot", |d| stages::dedup_within(d, &params, sec.keeper, sec.signature_cache.as_deref()));
    }
    if st.dedup_neighbor_pairs.enabled {
        let sec = &st.dedup_neighbor_pairs;
        let params = sec.params(cfg.seed);
        doc_stage!("dedup_neighbor_pairs", |d| stages::dedup_neighbors(d, &params, sec.keeper, sec.signature_cache.as_deref()));
    }
    if st.url_dedup.enabled {
        doc_stage!("url_dedup", |d| Ok::<_, String>(stages::url_dedup(d)));
    }
    if st.rules.enabled {
        let rc = st.rules.rule_config().map_err(|e| PipelineError::stage("rules", e))?;
        doc_stage!("rules", |d| Ok::<_, String>(stages::rules(d, &rc)));
    }
    if st.math_precision.enabled {
        let model = load_model("math_precision", &cfg.models.math_precision)?;
        let sec = &st.math_precision;
        doc_stage!("math_precision", |d| stages::math(d, &model, sec.threshold, PRECISION_STAGE, &sec.gate_config()));
    }
    if st.images_filter.enabled {
        let t = Instant::now();
        let n = docs.len() as u64;
        let (out, url_stats) = stages::images_filter(std::mem::take(&mut docs), &st.images_filter.filter_config(), cfg.n_shards);
        let write_stats = |p: &Path| -> Result<(), CorpusIoError> {
            let body = serde_json::to_string_pretty(&url_stats).expect("stats serialize");
            std::fs::write(p, body).map_err(|source| CorpusIoError::Io { path: p.into(), source })
        };
        r.finish("images_filter", n, t, &out, &[("url_stats.json", &write_stats)])?;
        docs = out.kept;
    }

    let mut manifest = None;
    if st.build_manifest.enabled {
        let t = Instant::now();
        let m = images::build_manifest(&docs);
        let mut out = StageOutput { kept: std::mem::take(&mut docs), drops: vec![], uncounted_drops: BTreeMap::new(), counters: BTreeMap::new() };
        out.counters.insert("manifest_entries".into(), m.entries.len() as u64);
        let write_manifest = |p: &Path| write_manifest(p, &m);
        let n = out.kept.len() as u64;
        r.finish("build_manifest", n, t, &out, &[(MANIFEST_FILE, &write_manifest)])?;
        docs = out.kept;
        manifest = Some(m);
    }
    if let (true, Some(m)) = (st.download.enabled, manifest.as_mut()) {
        let t = Instant::now();
        carry_over_downloads(m, &root.join(MANIFEST_FILE));
        let opts = st.download.options().map_err(|e| PipelineError::stage("download", e))?;
        let summary = images::download(m, root, &opts).map_err(|e| PipelineError::stage("download", e))?;
        write_manifest(&root.join(MANIFEST_FILE), m).map_err(|e| PipelineError::stage("download", e))?;
        let mut out = StageOutput { kept: std::mem::take(&mut docs), drops: vec![], uncounted_drops: BTreeMap::new(), counters: BTreeMap::new() };
        out.counters.insert("images_ok".into(), summary.ok as u64);
        out.counters.insert("images_failed".into(), summary.failed as u64);
        out.counters.insert("images_reused".into(), summary.skipped as u64);
        let n = out.kept.len() as u64;
        r.finish("download", n, t, &out, &[])?;
        docs = out.kept;

        if st.reintegrate.enabled {
            let m = &*m;
            doc_stage!("reintegrate", |d| images::reintegrate(d, m).map(|kept| StageOutput {
                kept,
                drops: vec![],
                uncounted_drops: BTreeMap::new(),
                counters: BTreeMap::new(),
            }));
        }
    }

    let corpus_dir = root.join("corpus");
    io::write_shards(&corpus_dir, &docs, cfg.n_shards).map_err(|e| PipelineError::stage("emit", e))?;
    let report = funnel_report(r.stats);
    std::fs::write(root.join(REPORT_FILE), report.to_json()).map_err(|e| PipelineError::stage("emit", e))?;
    std::fs::rename(root.join("partial"), root.join("stages")).map_err(|e| PipelineError::stage("emit", e))?;
    Ok(RunOutput { report, corpus_dir, manifest })
}

fn write_manifest(p: &Path, m: &DownloadManifest) -> Result<(), CorpusIoError> {
    let f = std::fs::File::create(p).map_err(|source| CorpusIoError::Io { path: p.into(), source })?;
    m.write_jsonl(std::io::BufWriter::new(f)).map_err(|source| CorpusIoError::Io { path: p.into(), source })
}

/// Copies finished download states from a previous run's manifest so stored
/// images are verified and reused instead of fetched again.
fn carry_over_downloads(m: &mut DownloadManifest, previous: &Path) {
    let Ok(f) = std::fs::File::open(previous) else { return };
    let Ok(prev) = DownloadManifest::read_jsonl(std::io::BufReader::new(f)) else {
        log::warn!("ignoring unreadable manifest {}", previous.display());
        return;
    };
    let by_url: BTreeMap<&str, &images::ManifestEntry> = prev.entries.iter().map(|e| (e.url.as_str(), e)).collect();
    for e in &mut m.entries {
        if let Some(old) = by_url.get(e.url.as_str()) {
            if matches!(old.status, images::DownloadStatus::Ok { .. }) {
                e.status = old.status.clone();
                e.content_hash = old.content_hash.clone();
            }
        }
    }
}

/// Reads the report of a finished run directory.
pub fn load_report(run_dir: &Path) -> Result<FunnelReport, CorpusIoError> {
    let p = run_dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&p).map_err(|source| CorpusIoError::Io { path: p.clone(), source })?;
    FunnelReport::from_json(&text).map_err(|e| CorpusIoError::Parse { path: p, line: e.line(), reason: e.to_string() })
}
