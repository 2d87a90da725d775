//! Subcommand implementations over the library stages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use mathcrawl::classifier::{LinearTextClassifier, TrainConfig};
use mathcrawl::dedup::{Keeper, MinHashParams};
use mathcrawl::doc::InterleavedDoc;
use mathcrawl::images::{self, DownloadManifest, DownloadOptions, DownloadStatus, ImageFilterConfig};
use mathcrawl::ingest::{write_jsonl, CrawlRecord};
use mathcrawl::langid::{train_langid, LangGateConfig, OTHER_LANG};
use mathcrawl::mathfilter::{
    ingest_llm_scores, sample_negatives, train_math, MathGateConfig, PRECISION_STAGE, RECALL_STAGE,
};
use mathcrawl::pipeline::config::{InputConfig, InputFormat, InputSource};
use mathcrawl::pipeline::io::write_lines;
use mathcrawl::pipeline::stages::{self, StageOutput};
use mathcrawl::pipeline::{self, read_docs, read_shards, validate, write_shards, PipelineConfig, DROPS_FILE};
use mathcrawl::rules::RuleConfig;
use mathcrawl::synth;
use serde_json::{json, Value};

use crate::{Command, DedupScope, Format, Invalid, KeeperArg, MathStage, ShardIo, Task};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { inputs, format, snapshot, shards, out } => ingest(inputs, format, snapshot, shards, &out),
        Command::Extract { io, keep_rejections } => {
            let records: Vec<CrawlRecord> = read_shards(&io.input)?;
            let out = stages::extract(records);
            finish(&io, &out, keep_rejections.as_deref())
        }
        Command::ClfTrain { task, pos, neg, out, epochs, lr, dim, buckets, seed } => {
            let cfg = TrainConfig { epochs, lr0: lr, seed, n_buckets: buckets, dim };
            cfg.validate().map_err(|e| Invalid(e.to_string()))?;
            clf_train(task, &pos, &neg, &out, &cfg)
        }
        Command::Langid { model, io, drop_log, min_prob, allowed } => {
            let cfg = LangGateConfig { allowed: allowed.into_iter().collect(), min_prob };
            cfg.validate().map_err(Invalid)?;
            let model = load_model(&model)?;
            let mut out = stages::language(read_docs(&io.input)?, &model, &cfg)?;
            // The language log flattens the prediction into the record.
            let lines: Vec<Value> = out
                .drops
                .drain(..)
                .map(|d| json!({"id": d.id, "reason": d.reason, "predicted": d.detail["language"], "prob": d.detail["prob"]}))
                .collect();
            write_shards(&io.out, &out.kept, io.shards)?;
            write_lines(&drop_log, &lines)?;
            summary(&out, lines.len());
            Ok(())
        }
        Command::MathGate { model, threshold, stage, io, drop_log } => {
            if !(0.0..=1.0).contains(&threshold) {
                bail!(Invalid(format!("threshold must be in [0, 1], got {threshold}")));
            }
            let name = match stage {
                MathStage::Recall => RECALL_STAGE,
                MathStage::Precision => PRECISION_STAGE,
            };
            let model = load_model(&model)?;
            let out = stages::math(read_docs(&io.input)?, &model, threshold, name, &MathGateConfig::default())?;
            finish(&io, &out, Some(&drop_log))
        }
        Command::LlmLabels { input, cutoff, out } => {
            if cutoff > 10 {
                bail!(Invalid(format!("cutoff must be in 0..=10, got {cutoff}")));
            }
            let f = File::open(&input).with_context(|| input.display().to_string())?;
            let labels = ingest_llm_scores(BufReader::new(f), cutoff)?;
            let lines: Vec<Value> = labels.positives.iter().map(|t| json!({"text": t})).collect();
            write_lines(&out, &lines)?;
            log::info!(
                "{} positives, {} below cutoff, {} unreadable",
                labels.positives.len(),
                labels.rejected_count,
                labels.error_count
            );
            Ok(())
        }
        Command::DedupContent { scope, io, drop_log, shingle_k, nperm, bands, rows, seed, keeper, signature_cache } => {
            let params = MinHashParams { shingle_k, n_perm: nperm, bands, rows, seed };
            params.validate().map_err(|e| Invalid(e.to_string()))?;
            let keeper = match keeper {
                KeeperArg::EarliestSnapshot => Keeper::EarliestSnapshot,
                KeeperArg::LatestSnapshot => Keeper::LatestSnapshot,
            };
            let docs = read_docs(&io.input)?;
            let cache = signature_cache.as_deref();
            let out = match scope {
                DedupScope::Snapshot => stages::dedup_within(docs, &params, keeper, cache)?,
                DedupScope::Neighbors => stages::dedup_neighbors(docs, &params, keeper, cache)?,
            };
            finish(&io, &out, Some(&drop_log))
        }
        Command::DedupUrl { io, drop_log } => {
            let out = stages::url_dedup(read_docs(&io.input)?);
            finish(&io, &out, Some(&drop_log))
        }
        Command::Rules { io, nsfw_list, drop_log, lorem_chars, punct_max } => {
            let base = match &nsfw_list {
                Some(p) => RuleConfig::with_wordlist(p).map_err(|e| Invalid(e.to_string()))?,
                None => RuleConfig::default(),
            };
            let cfg = RuleConfig { lorem_short_chars: lorem_chars, punct_ratio_max: punct_max, ..base };
            cfg.validate().map_err(|e| Invalid(e.to_string()))?;
            let out = stages::rules(read_docs(&io.input)?, &cfg);
            finish(&io, &out, Some(&drop_log))
        }
        Command::ImagesFilter { io, stats_out, drop_log, max_url_freq, max_images_per_doc, allow_http } => {
            let cfg = ImageFilterConfig { max_url_freq, max_images_per_doc, require_https: !allow_http, ..Default::default() };
            cfg.validate().map_err(Invalid)?;
            let (out, stats) = stages::images_filter(read_docs(&io.input)?, &cfg, io.shards);
            std::fs::write(&stats_out, serde_json::to_string_pretty(&stats)?)
                .with_context(|| stats_out.display().to_string())?;
            for (k, v) in &out.counters {
                log::info!("{k}: {v}");
            }
            finish(&io, &out, drop_log.as_deref())
        }
        Command::ImagesDownload { manifest, from, out_dir, concurrency, per_host, timeout, max_bytes, retries } => {
            let timeout = Duration::try_from_secs_f64(timeout).map_err(|e| Invalid(format!("timeout: {e}")))?;
            let opts = DownloadOptions {
                concurrency,
                per_host_limit: per_host,
                timeout,
                max_bytes,
                retries,
                ..Default::default()
            };
            opts.validate().map_err(|e| Invalid(e.to_string()))?;
            images_download(&manifest, from.as_deref(), &out_dir, &opts)
        }
        Command::ImagesReintegrate { io, manifest } => {
            let m = read_manifest(&manifest)?;
            let docs = images::reintegrate(read_docs(&io.input)?, &m)?;
            write_shards(&io.out, &docs, io.shards)?;
            log::info!("{} documents annotated", docs.len());
            Ok(())
        }
        Command::Run { config, stages, dry_run } => run(&config, stages, dry_run),
        Command::Stats { run_dir, json } => {
            let report = pipeline::load_report(&run_dir)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.render_table());
            }
            Ok(())
        }
        Command::SynthCorpus { out, n, seed } => synth_corpus(&out, n, seed),
    }
}

fn load_model(path: &Path) -> Result<LinearTextClassifier> {
    LinearTextClassifier::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn summary<T>(out: &StageOutput<T>, dropped: usize) {
    log::info!("kept {}, dropped {}", out.kept.len(), dropped);
    for (reason, n) in out.drops_by_reason() {
        log::info!("  {reason}: {n}");
    }
}

/// Writes survivors as shards and drops to `drop_log` when given.
fn finish(io: &ShardIo, out: &StageOutput<InterleavedDoc>, drop_log: Option<&Path>) -> Result<()> {
    write_shards(&io.out, &out.kept, io.shards)?;
    if let Some(p) = drop_log {
        write_lines(p, &out.drops)?;
    }
    summary(out, out.drops.len());
    Ok(())
}

fn ingest(inputs: Vec<std::path::PathBuf>, format: Format, snapshot: Option<String>, shards: usize, out: &Path) -> Result<()> {
    let format = match format {
        Format::Jsonl => InputFormat::Jsonl,
        Format::Warc => InputFormat::Warc,
    };
    if matches!(format, InputFormat::Warc) && snapshot.is_none() {
        bail!(Invalid("--snapshot is required for WARC input".into()));
    }
    let input = InputConfig {
        format,
        sources: inputs.into_iter().map(|path| InputSource { path, snapshot: snapshot.clone() }).collect(),
    };
    let result = stages::ingest(&input)?;
    write_shards(out, &result.kept, shards)?;
    write_lines(&out.join(DROPS_FILE), &result.drops)?;
    for (k, v) in &result.counters {
        log::info!("{k}: {v}");
    }
    summary(&result, result.drops.len());
    Ok(())
}

/// Text of one training line: a `text` field or an interleaved document.
fn line_text(v: &Value) -> Result<String> {
    if let Some(t) = v.get("text").and_then(Value::as_str) {
        return Ok(t.to_string());
    }
    let doc: InterleavedDoc = serde_json::from_value(v.clone()).context("line has neither `text` nor document fields")?;
    Ok(doc.plain_text())
}

fn read_texts(path: &Path) -> Result<Vec<Value>> {
    read_shards(path).with_context(|| format!("reading {}", path.display()))
}

fn clf_train(task: Task, pos: &Path, neg: &Path, out: &Path, cfg: &TrainConfig) -> Result<()> {
    let pos_lines = read_texts(pos)?;
    let neg_lines = read_texts(neg)?;
    let model = match task {
        Task::Langid => {
            let label = |v: &Value, default: Option<&str>| -> Result<String> {
                let l = ["label", "language"].iter().find_map(|k| v.get(*k).and_then(Value::as_str));
                l.or(default).map(str::to_string).context("positive langid line has no `label` or `language`")
            };
            let mut samples = Vec::new();
            for v in &pos_lines {
                samples.push((line_text(v)?, label(v, None)?));
            }
            for v in &neg_lines {
                samples.push((line_text(v)?, label(v, Some(OTHER_LANG))?));
            }
            train_langid(&samples, cfg)?
        }
        Task::Math => {
            let positives = pos_lines.iter().map(line_text).collect::<Result<Vec<_>>>()?;
            let pool = neg_lines.iter().map(line_text).collect::<Result<Vec<_>>>()?;
            let negatives = sample_negatives(&pool, positives.len(), cfg.seed);
            log::info!("{} positives, {} of {} negatives sampled", positives.len(), negatives.len(), pool.len());
            train_math(&positives, &negatives, cfg, &MathGateConfig::default())?
        }
    };
    model.save(out)?;
    log::info!("model with labels {:?} written to {}", model.labels(), out.display());
    Ok(())
}

fn read_manifest(path: &Path) -> Result<DownloadManifest> {
    let f = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    Ok(DownloadManifest::read_jsonl(BufReader::new(f))?)
}

fn images_download(manifest_path: &Path, from: Option<&Path>, out_dir: &Path, opts: &DownloadOptions) -> Result<()> {
    let mut manifest = match from {
        Some(dir) => {
            let mut m = images::build_manifest(&read_docs(dir)?);
            if manifest_path.exists() {
                let prev = read_manifest(manifest_path)?;
                let done: BTreeMap<&str, &images::ManifestEntry> = prev
                    .entries
                    .iter()
                    .filter(|e| matches!(e.status, DownloadStatus::Ok { .. }))
                    .map(|e| (e.url.as_str(), e))
                    .collect();
                for e in &mut m.entries {
                    if let Some(old) = done.get(e.url.as_str()) {
                        e.status = old.status.clone();
                        e.content_hash = old.content_hash.clone();
                    }
                }
            }
            m
        }
        None => read_manifest(manifest_path)?,
    };
    let s = images::download(&mut manifest, out_dir, opts)?;
    let mut w = BufWriter::new(File::create(manifest_path).with_context(|| manifest_path.display().to_string())?);
    manifest.write_jsonl(&mut w)?;
    w.flush()?;
    log::info!("{} ok, {} failed, {} already done", s.ok, s.failed, s.skipped);
    Ok(())
}

fn run(config: &Path, stages: Option<Vec<String>>, dry_run: bool) -> Result<()> {
    let mut cfg = PipelineConfig::load(config).map_err(|e| Invalid(e.to_string()))?;
    if let Some(names) = stages {
        cfg.select_stages(&names).map_err(|e| Invalid(e.to_string()))?;
    }
    if dry_run {
        let violations = validate(&cfg);
        if !violations.is_empty() {
            bail!(pipeline::PipelineError::Invalid(violations));
        }
        println!("config ok; stages: {}", cfg.planned_stages().join(", "));
        println!("output: {}", cfg.output.display());
        return Ok(());
    }
    let out = pipeline::run(&cfg)?;
    print!("{}", out.report.render_table());
    println!("corpus: {}", out.corpus_dir.display());
    Ok(())
}

fn synth_corpus(out: &Path, n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let records: Vec<CrawlRecord> = synth::crawl_corpus(seed, n).into_iter().map(|p| p.record).collect();
    write_jsonl(BufWriter::new(File::create(out.join("crawl.jsonl"))?), &records)?;
    let models = synth::pipeline_models(seed)?;
    models.langid.save(&out.join("langid.mclf"))?;
    models.math_recall.save(&out.join("math_recall.mclf"))?;
    models.math_precision.save(&out.join("math_precision.mclf"))?;
    let config = format!(
        "output = \"run\"\nseed = {seed}\n\n[input]\nformat = \"jsonl\"\n\n[[input.sources]]\npath = \"crawl.jsonl\"\n\n\
         [models]\nlangid = \"langid.mclf\"\nmath_recall = \"math_recall.mclf\"\nmath_precision = \"math_precision.mclf\"\n"
    );
    std::fs::write(out.join("pipeline.toml"), config)?;
    log::info!("{} records, models and pipeline.toml written to {}", records.len(), out.display());
    Ok(())
}
