use std::path::Path;
use std::sync::Arc;

use mathcrawl::images::IMAGE_SLOTS_META;
use mathcrawl::ingest::{write_jsonl, CrawlRecord};
use mathcrawl::pipeline::{self, read_docs, PipelineConfig, PipelineError, STAGE_ORDER};
use mathcrawl::synth;

fn setup(root: &Path, records: &[CrawlRecord], extra: &str) -> PipelineConfig {
    write_jsonl(std::fs::File::create(root.join("crawl.jsonl")).unwrap(), records).unwrap();
    let models = synth::pipeline_models(3).unwrap();
    models.langid.save(&root.join("langid.bin")).unwrap();
    models.math_recall.save(&root.join("recall.bin")).unwrap();
    models.math_precision.save(&root.join("precision.bin")).unwrap();
    let text = format!(
        "output = \"out\"\nn_shards = 3\n[input]\nformat = \"jsonl\"\n[[input.sources]]\npath = \"crawl.jsonl\"\n\
         [models]\nlangid = \"langid.bin\"\nmath_recall = \"recall.bin\"\nmath_precision = \"precision.bin\"\n{extra}"
    );
    let mut cfg = PipelineConfig::from_toml(&text).unwrap();
    cfg.resolve_relative(root);
    cfg
}

fn crawl(n: usize) -> Vec<CrawlRecord> {
    synth::crawl_corpus(19, n).into_iter().map(|p| p.record).collect()
}

#[test]
fn stage_order_and_conservation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &crawl(200), "");
    let out = pipeline::run(&cfg).unwrap();
    let names: Vec<&str> = out.report.stages.iter().map(|r| r.stats.stage.as_str()).collect();
    assert_eq!(names, STAGE_ORDER[..11]);
    assert!(out.report.stages.iter().all(|r| r.stats.is_conserved()));
    assert!(cfg.output.join("stages/00_ingest/drops.jsonl").exists());
    assert!(!cfg.output.join("partial").exists());
    assert_eq!(read_docs(&out.corpus_dir).unwrap().len() as u64, out.report.total_out);
}

#[test]
fn disabled_stages_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[stage.dedup_within_snapshot]\nenabled = false\n[stage.dedup_neighbor_pairs]\nenabled = false\n";
    let cfg = setup(dir.path(), &crawl(200), extra);
    let out = pipeline::run(&cfg).unwrap();
    let rows = &out.report.stages;
    assert!(rows.iter().all(|r| !r.stats.stage.starts_with("dedup")));
    let recall = rows.iter().position(|r| r.stats.stage == "math_recall").unwrap();
    assert_eq!(rows[recall + 1].stats.stage, "url_dedup");
    assert_eq!(rows[recall + 1].stats.docs_in, rows[recall].stats.docs_out);

    let full = pipeline::run(&setup(tempfile::tempdir().unwrap().path(), &crawl(200), "")).unwrap();
    assert!(out.report.total_out >= full.report.total_out);
}

#[test]
fn failure_names_stage_and_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = dir.path().join("cache_is_a_dir");
    std::fs::create_dir(&cache_dir).unwrap();
    let extra = format!("[stage.dedup_within_snapshot]\nsignature_cache = \"{}\"\n", cache_dir.display());
    let cfg = setup(dir.path(), &crawl(60), &extra);
    match pipeline::run(&cfg) {
        Err(PipelineError::Stage { stage, .. }) => assert_eq!(stage, "dedup_within_snapshot"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(cfg.output.join("partial/03_math_recall/drops.jsonl").exists());
    assert!(!cfg.output.join("report.json").exists());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &crawl(5), "[stage.dedup_neighbor_pairs]\nn_perm = 100\n");
    match pipeline::run(&cfg) {
        Err(PipelineError::Invalid(v)) => assert!(v[0].contains("bands×rows ≠ n_perm"), "{v:?}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!cfg.output.exists());
}

fn serve_png(server: Arc<tiny_http::Server>) -> std::thread::JoinHandle<usize> {
    std::thread::spawn(move || {
        let mut served = 0;
        for req in server.incoming_requests() {
            let resp = if req.url().ends_with(".png") {
                served += 1;
                let body = format!("png bytes for {}", req.url()).into_bytes();
                tiny_http::Response::from_data(body)
                    .with_header("Content-Type: image/png".parse::<tiny_http::Header>().unwrap())
            } else {
                tiny_http::Response::from_data(Vec::new()).with_status_code(404)
            };
            let _ = req.respond(resp);
        }
        served
    })
}

#[test]
fn download_and_reintegrate() {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let port = server.server_addr().to_ip().unwrap().port();
    let handle = serve_png(server.clone());

    let mut r = synth::rng(4);
    let records: Vec<CrawlRecord> = (0..3)
        .map(|i| {
            let html = format!(
                "<html><body><article><p>{}</p><img src=\"http://127.0.0.1:{port}/fig{i}.png\"><p>{}</p>\
                 <img src=\"http://127.0.0.1:{port}/gone{i}.gif\"></article></body></html>",
                synth::page_text(&mut r, true),
                synth::page_text(&mut r, true)
            );
            let mut rec = synth::crawl_corpus(1, 1).remove(0).record;
            rec.id = format!("img-{i}");
            rec.url = format!("https://local.example.org/{i}");
            rec.content_type = "text/html".into();
            rec.html = html;
            rec
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let extra = "[stage.images_filter]\nrequire_https = false\n[stage.download]\nenabled = true\nretries = 0\ntimeout_secs = 5\n";
    let cfg = setup(dir.path(), &records, extra);

    let out = pipeline::run(&cfg).unwrap();
    let names: Vec<&str> = out.report.stages.iter().map(|r| r.stats.stage.as_str()).collect();
    assert_eq!(names, STAGE_ORDER);
    let download = &out.report.stages[11].stats;
    assert_eq!((download.counters["images_ok"], download.counters["images_failed"]), (3, 3));

    let docs = read_docs(&out.corpus_dir).unwrap();
    assert_eq!(docs.len(), 3);
    for d in &docs {
        let slots = d.meta[IMAGE_SLOTS_META].as_array().unwrap();
        assert_eq!(slots.len(), d.len());
        let statuses: Vec<&str> = slots.iter().filter_map(|s| s.get("status")?.as_str()).collect();
        assert_eq!(statuses, ["ok", "failed:http_status(404)"]);
        let path = slots.iter().find_map(|s| s.get("local_path")?.as_str()).unwrap();
        assert!(cfg.output.join(path).exists());
    }
    assert!(cfg.output.join("manifest.jsonl").exists());

    let again = pipeline::run(&cfg).unwrap();
    assert_eq!(again.report.stages[11].stats.counters["images_reused"], 3);
    server.unblock();
    assert_eq!(handle.join().unwrap(), 3);
}
