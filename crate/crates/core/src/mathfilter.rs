//! Token preprocessing for the math classifier and the two math gates.

use std::io::BufRead;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde_json::Value;

use crate::classifier::{self, ClassifierError, Example, LinearTextClassifier, TrainConfig};
use crate::doc::InterleavedDoc;

pub const MATH_FEATURIZER: &str = "math-word12-v1";
pub const MATH_LABEL: &str = "math";
pub const NONMATH_LABEL: &str = "nonmath";
pub const NUM_PLACEHOLDER: &str = "<NUM>";
pub const BIGRAM_SEPARATOR: char = '\u{241F}';
pub const RECALL_STAGE: &str = "math_recall";
pub const PRECISION_STAGE: &str = "math_precision";

#[derive(Debug, Clone, PartialEq)]
pub struct MathGateConfig {
    pub recall_threshold: f64,
    pub precision_threshold: f64,
    pub max_token_chars: usize,
}

impl Default for MathGateConfig {
    fn default() -> Self {
        MathGateConfig { recall_threshold: 0.4, precision_threshold: 0.5, max_token_chars: 100 }
    }
}

impl MathGateConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, t) in [("recall_threshold", self.recall_threshold), ("precision_threshold", self.precision_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(format!("{name} must be in (0, 1), got {t}"));
            }
        }
        if self.max_token_chars < 1 {
            return Err("max_token_chars must be >= 1".into());
        }
        Ok(())
    }
}

static NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][+-]?[0-9]+)?$").unwrap());
static DASH_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-{2,}").unwrap());
static UNDERSCORE_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"_{2,}").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)https?://\S+").unwrap());

pub fn is_numeric_token(tok: &str) -> bool {
    NUMERIC.is_match(tok)
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3000}'..='\u{303F}' | '\u{3400}'..='\u{4DBF}' | '\u{4E00}'..='\u{9FFF}'
        | '\u{F900}'..='\u{FAFF}' | '\u{FF00}'..='\u{FFEF}' | '\u{20000}'..='\u{2FA1F}')
}

/// Suffix-stripping lemma approximation, applied until nothing changes.
fn lemma(tok: &mut String) {
    if !tok.bytes().all(|b| b.is_ascii_alphabetic()) {
        return;
    }
    loop {
        let n = tok.len();
        let cut = if n > 3 && !tok.ends_with("ss") && tok.ends_with("es") {
            2
        } else if n > 3 && !tok.ends_with("ss") && tok.ends_with('s') {
            1
        } else if n > 5 && tok.ends_with("ing") {
            3
        } else if n > 5 && tok.ends_with("ed") {
            2
        } else {
            break;
        };
        tok.truncate(n - cut);
    }
}

/// Classifier-side token normalization: line breaks removed, whitespace
/// split, lowercased, suffix-lemmatized, dash/underscore runs collapsed,
/// numbers replaced by `<NUM>`, over-long tokens dropped. Tokens containing
/// CJK characters skip the case, lemma and collapse steps.
pub fn normalize_for_classifier(text: &str, cfg: &MathGateConfig) -> Vec<String> {
    let text = text.replace(['\n', '\r'], " ");
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut tok = if raw == NUM_PLACEHOLDER {
            raw.to_string()
        } else if raw.chars().any(is_cjk) {
            raw.to_string()
        } else {
            let mut t = raw.to_lowercase();
            lemma(&mut t);
            if t.contains("--") {
                t = DASH_RUN.replace_all(&t, "-").into_owned();
            }
            if t.contains("__") {
                t = UNDERSCORE_RUN.replace_all(&t, "_").into_owned();
            }
            t
        };
        if is_numeric_token(&tok) {
            tok = NUM_PLACEHOLDER.to_string();
        }
        if tok.is_empty() || tok.chars().count() > cfg.max_token_chars {
            continue;
        }
        out.push(tok);
    }
    out
}

/// Unigrams `w:<t>` plus adjacent bigrams `b:<t1>␟<t2>`.
pub fn featurize_math<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| format!("w:{}", t.as_ref())).collect();
    for w in tokens.windows(2) {
        out.push(format!("b:{}{BIGRAM_SEPARATOR}{}", w[0].as_ref(), w[1].as_ref()));
    }
    out
}

pub fn math_features(text: &str, cfg: &MathGateConfig) -> Vec<String> {
    featurize_math(&normalize_for_classifier(text, cfg))
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "gif", "svg", "webp"];
const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', ')', ']', '}', '"', '\''];

fn is_image_url(url: &str) -> bool {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let path = path.strip_suffix('/').unwrap_or(path);
    path.rsplit_once('.')
        .map(|(_, ext)| !ext.contains('/') && IMAGE_EXTENSIONS.iter().any(|e| ext.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

/// Deletes absolute image URLs; whitespace around each deletion collapses to
/// a single space (or nothing at the text edges).
pub fn strip_image_urls(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in URL.find_iter(text) {
        let url = m.as_str().trim_end_matches(TRAILING_PUNCT);
        if !is_image_url(url) {
            continue;
        }
        let kept = &text[last..m.start()];
        out.push_str(kept);
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
        last = m.start() + url.len();
        let rest = text[last..].trim_start();
        last = text.len() - rest.len();
        if !out.is_empty() && !rest.is_empty() {
            out.push(' ');
        }
    }
    if last == 0 {
        return text.to_string();
    }
    out.push_str(&text[last..]);
    out
}

/// LLM-scored labelling sample: `score` is on the 0..=10 scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredSample {
    pub text: String,
    pub score: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LlmLabels {
    pub positives: Vec<String>,
    /// Valid lines scoring below the cutoff.
    pub rejected_count: usize,
    /// Unparseable lines or scores outside 0..=10.
    pub error_count: usize,
}

fn parse_score(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => {
            let s = s.trim();
            let s = s.rsplit_once(':').map(|(_, n)| n.trim()).unwrap_or(s);
            s.parse().ok()
        }
        _ => None,
    }
}

pub fn parse_scored_line(line: &str) -> Result<ScoredSample, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let text = v.get("text").and_then(Value::as_str).ok_or("missing string `text`")?;
    let score = v.get("score").and_then(parse_score).ok_or("missing or non-integer `score`")?;
    if !(0..=10).contains(&score) {
        return Err(format!("score {score} outside 0..=10"));
    }
    Ok(ScoredSample { text: text.to_string(), score: score as u8 })
}

/// Reads `{"text", "score"}` lines and keeps texts scoring at least `cutoff`.
pub fn ingest_llm_scores<R: BufRead>(stream: R, cutoff: u8) -> std::io::Result<LlmLabels> {
    let mut out = LlmLabels::default();
    for (i, line) in stream.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_scored_line(&line) {
            Ok(s) if s.score >= cutoff => out.positives.push(s.text),
            Ok(_) => out.rejected_count += 1,
            Err(e) => {
                log::warn!("score line {}: {e}", i + 1);
                out.error_count += 1;
            }
        }
    }
    Ok(out)
}

/// Probability of the `math` class for a text.
pub fn math_score(model: &LinearTextClassifier, text: &str, cfg: &MathGateConfig) -> Result<f64, ClassifierError> {
    model.expect_featurizer(MATH_FEATURIZER)?;
    let idx = model.label_index(MATH_LABEL)?;
    Ok(model.predict(&math_features(text, cfg)).probs[idx])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MathDecision {
    pub keep: bool,
    pub score: f64,
}

/// Scores the doc, records the score under `stage_name` and keeps it iff
/// `score >= threshold`.
pub fn math_gate(
    doc: &mut InterleavedDoc,
    model: &LinearTextClassifier,
    threshold: f64,
    stage_name: &str,
    cfg: &MathGateConfig,
) -> Result<MathDecision, ClassifierError> {
    let score = math_score(model, &doc.plain_text(), cfg)?;
    doc.scores.insert(stage_name.to_string(), score);
    Ok(MathDecision { keep: score >= threshold, score })
}

/// Trains a math/nonmath model over normalized features. Texts that
/// normalize to nothing are skipped.
pub fn train_math(
    positives: &[String],
    negatives: &[String],
    train_cfg: &TrainConfig,
    cfg: &MathGateConfig,
) -> Result<LinearTextClassifier, ClassifierError> {
    let examples: Vec<Example> = positives
        .iter()
        .map(|t| (t, MATH_LABEL))
        .chain(negatives.iter().map(|t| (t, NONMATH_LABEL)))
        .map(|(t, l)| Example::new(math_features(t, cfg), l))
        .filter(|e| !e.features.is_empty())
        .collect();
    classifier::train(&examples, train_cfg, MATH_FEATURIZER)
}

/// Balanced negatives: samples `n` texts uniformly without replacement from
/// the pool and strips image URLs from each.
pub fn sample_negatives(pool: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut crate::synth::rng(seed));
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| strip_image_urls(&pool[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::text_doc;
    use crate::synth::{math_prose_corpus, synth_train_config, MathCorpusSpec};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn norm(s: &str) -> Vec<String> {
        normalize_for_classifier(s, &MathGateConfig::default())
    }

    #[test]
    fn normalize_reference() {
        assert_eq!(norm("Solve 42 equations\nwith y=3.14"), ["solve", "<NUM>", "equation", "with", "y=3.14"]);
        assert_eq!(norm("a----b __init__"), ["a-b", "_init_"]);
        assert!(norm(&"a".repeat(150)).is_empty());
        assert_eq!(norm(&"a".repeat(100)).len(), 1);
    }

    #[test]
    fn lemma_rules() {
        assert_eq!(norm("cats class gas running walked sing bed meetings"), [
            "cat", "class", "gas", "runn", "walk", "sing", "bed", "meet"
        ]);
        assert_eq!(norm("3.5e-7 -2 +.5 1. x2"), ["<NUM>", "<NUM>", "<NUM>", "<NUM>", "x2"]);
    }

    #[test]
    fn collapse_then_num() {
        assert_eq!(norm("1e--5"), ["<NUM>"]);
    }

    #[test]
    fn chinese_passthrough() {
        assert_eq!(norm("微积分Things 123 题目__A"), ["微积分Things", "<NUM>", "题目__A"]);
    }

    #[test]
    fn featurize_reference() {
        assert_eq!(featurize_math(&["a", "b"]), ["w:a", "w:b", "b:a\u{241F}b"]);
        assert_eq!(featurize_math(&["x"]), ["w:x"]);
        assert!(featurize_math::<&str>(&[]).is_empty());
    }

    #[test]
    fn strip_reference() {
        assert_eq!(strip_image_urls("see https://a.com/x.png here"), "see here");
        assert_eq!(strip_image_urls("see https://a.com/x.html here"), "see https://a.com/x.html here");
        assert_eq!(strip_image_urls("https://a.com/x.PNG?s=2"), "");
        assert_eq!(strip_image_urls("a http://b.org/i.webp, c"), "a , c");
        assert_eq!(strip_image_urls("x\n https://a.com/p/q.jpeg\n\ny"), "x y");
        assert_eq!(strip_image_urls("https://a.com/png/page"), "https://a.com/png/page");
    }

    #[test]
    fn llm_scores() {
        let input = [6, 5, 10, 0].iter().map(|s| format!(r#"{{"text":"t{s}","score":{s}}}"#)).collect::<Vec<_>>();
        let got = ingest_llm_scores(input.join("\n").as_bytes(), 6).unwrap();
        assert_eq!(got.positives, ["t6", "t10"]);
        assert_eq!(got.rejected_count, 2);

        let got = ingest_llm_scores(&br#"{"text":"x","score":11}"#[..], 6).unwrap();
        assert!(got.positives.is_empty());
        assert_eq!(got.error_count, 1);

        assert_eq!(ingest_llm_scores(&b""[..], 6).unwrap(), LlmLabels::default());

        let got = ingest_llm_scores(&br#"{"text":"y","score":"mathematical score: 7"}"#[..], 6).unwrap();
        assert_eq!(got.positives, ["y"]);
    }

    fn model() -> &'static LinearTextClassifier {
        static M: OnceLock<LinearTextClassifier> = OnceLock::new();
        M.get_or_init(|| {
            let spec = MathCorpusSpec { n_per_class: 500, ..Default::default() };
            let c = math_prose_corpus(5, &spec);
            let pos: Vec<String> = c.iter().filter(|s| s.label_is_math).map(|s| s.text.clone()).collect();
            let neg: Vec<String> = c.iter().filter(|s| !s.label_is_math).map(|s| s.text.clone()).collect();
            train_math(&pos, &neg, &synth_train_config(3), &MathGateConfig::default()).unwrap()
        })
    }

    #[test]
    fn gate_reference_docs() {
        let cfg = MathGateConfig::default();
        let mut d = text_doc(
            "m",
            r"Theorem. Let $f$ be a polynomial; then the derivative $f'(x)$ exists and the integral $\int_0^1 f(x)\,dx$ converges. Proof by lemma on the matrix determinant.",
        );
        let dec = math_gate(&mut d, model(), 0.4, RECALL_STAGE, &cfg).unwrap();
        assert!(dec.keep && dec.score > 0.9, "{dec:?}");
        assert_eq!(d.scores[RECALL_STAGE], dec.score);

        let mut d = text_doc("r", "Melt the butter in a skillet, add garlic and onion, simmer the sauce and bake the dough in the oven.");
        let dec = math_gate(&mut d, model(), 0.4, RECALL_STAGE, &cfg).unwrap();
        assert!(!dec.keep, "{dec:?}");
        assert_eq!(d.scores[RECALL_STAGE], dec.score);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut d = text_doc("m", "theorem proof");
        let s = math_score(model(), "theorem proof", &MathGateConfig::default()).unwrap();
        let dec = math_gate(&mut d, model(), s, RECALL_STAGE, &MathGateConfig::default()).unwrap();
        assert!(dec.keep);
    }

    #[test]
    fn negatives_are_stripped_and_balanced() {
        let pool: Vec<String> = (0..10).map(|i| format!("doc {i} https://x.org/{i}.png")).collect();
        let neg = sample_negatives(&pool, 4, 1);
        assert_eq!(neg.len(), 4);
        assert!(neg.iter().all(|t| !t.contains("http")));
        assert_eq!(neg, sample_negatives(&pool, 4, 1));
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "([a-zA-Z0-9_.+=-]{0,12}|[ \n\r]|微积|----|__|1e-5|<NUM>){0,20}") {
            let once = norm(&s);
            prop_assert_eq!(norm(&once.join(" ")), once);
        }

        #[test]
        fn num_replacement_total(s in "([0-9eE.+_-]{1,8}| ){0,12}") {
            for t in norm(&s) {
                prop_assert!(!is_numeric_token(&t), "{t}");
            }
        }

        #[test]
        fn gate_monotone(t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let spec = MathCorpusSpec { n_per_class: 20, ..Default::default() };
            for s in math_prose_corpus(9, &spec) {
                let score = math_score(model(), &s.text, &MathGateConfig::default()).unwrap();
                prop_assert!(!(score >= hi) || score >= lo);
            }
        }
    }
}
