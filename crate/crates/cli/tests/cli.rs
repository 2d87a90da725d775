use std::path::Path;
use std::process::{Command, Output};

fn mathcrawl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mathcrawl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_run_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&mathcrawl(&["synth-corpus", "--out", "work", "--n", "150", "--seed", "2"], root));

    let plan = ok(&mathcrawl(&["run", "--config", "work/pipeline.toml", "--dry-run"], root));
    assert!(plan.contains("ingest, extract, language_gate"), "{plan}");
    assert!(!root.join("work/run").exists());

    let table = ok(&mathcrawl(&["run", "--config", "work/pipeline.toml"], root));
    assert!(table.contains("math_precision"));
    assert!(root.join("work/run/report.json").exists());
    assert!(root.join("work/run/corpus").is_dir());

    let stats = ok(&mathcrawl(&["stats", "--run-dir", "work/run"], root));
    assert!(stats.lines().next().unwrap().starts_with("stage"));
    let json: serde_json::Value = serde_json::from_str(&ok(&mathcrawl(&["stats", "--run-dir", "work/run", "--json"], root))).unwrap();
    assert_eq!(json["stages"][0]["stage"], "ingest");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&mathcrawl(&["synth-corpus", "--out", "w", "--n", "40"], root));
    let base = std::fs::read_to_string(root.join("w/pipeline.toml")).unwrap();

    std::fs::write(root.join("w/bad.toml"), format!("{base}\n[stage.dedup_within_snapshot]\nn_perm = 100\n")).unwrap();
    let out = mathcrawl(&["run", "--config", "w/bad.toml"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bands×rows ≠ n_perm"));

    let out = mathcrawl(&["run", "--config", "w/pipeline.toml", "--stages", "rules,bogus"], root);
    assert_eq!(out.status.code(), Some(2));

    std::fs::create_dir(root.join("w/cache")).unwrap();
    std::fs::write(root.join("w/fail.toml"), format!("{base}\n[stage.dedup_within_snapshot]\nsignature_cache = \"cache\"\n")).unwrap();
    let out = mathcrawl(&["run", "--config", "w/fail.toml"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dedup_within_snapshot"));
}

#[test]
fn standalone_stage_chain() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&mathcrawl(&["synth-corpus", "--out", "w", "--n", "120", "--seed", "5"], root));
    ok(&mathcrawl(&["ingest", "w/crawl.jsonl", "--shards", "3", "--out", "s0"], root));
    assert!(root.join("s0/shard-00002.jsonl").exists());
    ok(&mathcrawl(&["extract", "--in", "s0", "--out", "s1", "--keep-rejections", "rej.jsonl"], root));
    ok(&mathcrawl(
        &["langid", "--model", "w/langid.mclf", "--in", "s1", "--out", "s2", "--drop-log", "lang.jsonl"],
        root,
    ));
    let lang = lines(&root.join("lang.jsonl"));
    assert!(!lang.is_empty());
    assert!(lang.iter().all(|d| d["predicted"].is_string() && d["prob"].is_f64()));
    ok(&mathcrawl(
        &["math-gate", "--model", "w/math_recall.mclf", "--threshold", "0.4", "--stage", "recall", "--in", "s2", "--out", "s3", "--drop-log", "m.jsonl"],
        root,
    ));
    ok(&mathcrawl(&["dedup-content", "--scope", "snapshot", "--in", "s3", "--out", "s4", "--drop-log", "d.jsonl"], root));
    ok(&mathcrawl(&["dedup-url", "--in", "s4", "--out", "s5", "--drop-log", "u.jsonl"], root));
    ok(&mathcrawl(&["rules", "--in", "s5", "--out", "s6", "--drop-log", "r.jsonl"], root));
    ok(&mathcrawl(&["images-filter", "--in", "s6", "--out", "s7", "--stats-out", "urls.json"], root));
    let urls: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("urls.json")).unwrap()).unwrap();
    assert!(urls.as_object().is_some_and(|m| !m.is_empty()));

    let count = |d: &str| -> usize {
        std::fs::read_dir(root.join(d))
            .unwrap()
            .map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap().lines().count())
            .sum()
    };
    let drops = |f: &str| lines(&root.join(f)).len();
    assert_eq!(count("s1"), count("s2") + drops("lang.jsonl"));
    assert_eq!(count("s2"), count("s3") + drops("m.jsonl"));
    assert_eq!(count("s3"), count("s4") + drops("d.jsonl"));
    assert_eq!(count("s4"), count("s5") + drops("u.jsonl"));
    assert_eq!(count("s5"), count("s6") + drops("r.jsonl"));
    assert!(drops("d.jsonl") > 0 && drops("u.jsonl") > 0);
}

#[test]
fn labels_and_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let math = ["solve $x^2 + 3x = 4$ for x using the quadratic formula", "the integral of $\\sin x$ is $-\\cos x$"];
    let prose = ["the garden was quiet in the evening light", "we walked along the river to the old mill"];
    let mut scored = String::new();
    for i in 0..60 {
        scored.push_str(&serde_json::json!({"text": format!("{} {i}", math[i % 2]), "score": 8}).to_string());
        scored.push('\n');
        scored.push_str(&serde_json::json!({"text": format!("{} {i}", prose[i % 2]), "score": 2}).to_string());
        scored.push('\n');
    }
    scored.push_str("not json\n");
    std::fs::write(root.join("scores.jsonl"), scored).unwrap();
    ok(&mathcrawl(&["llm-labels", "--in", "scores.jsonl", "--cutoff", "6", "--out", "pos.jsonl"], root));
    assert_eq!(lines(&root.join("pos.jsonl")).len(), 60);

    let neg: String = (0..80).map(|i| serde_json::json!({"text": format!("{} {i}", prose[i % 2])}).to_string() + "\n").collect();
    std::fs::write(root.join("neg.jsonl"), neg).unwrap();
    ok(&mathcrawl(
        &["clf-train", "--task", "math", "--pos", "pos.jsonl", "--neg", "neg.jsonl", "--out", "m.mclf", "--buckets", "4096", "--epochs", "10"],
        root,
    ));
    let head = std::fs::read(root.join("m.mclf")).unwrap();
    assert!(head.starts_with(b"MCLF1"));

    let out = mathcrawl(&["clf-train", "--task", "math", "--pos", "pos.jsonl", "--neg", "neg.jsonl", "--out", "x.mclf", "--epochs", "0"], root);
    assert_eq!(out.status.code(), Some(2));
}
