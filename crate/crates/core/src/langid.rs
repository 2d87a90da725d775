//! Character n-gram language identification and the language gate.

use std::collections::BTreeSet;

use crate::classifier::{self, ClassifierError, Example, LinearTextClassifier, TrainConfig};
use crate::doc::InterleavedDoc;

pub const LANGID_FEATURIZER: &str = "langid-char234-v1";
/// Only this many leading characters of normalized text are featurized.
pub const MAX_LANG_CHARS: usize = 2000;
pub const OTHER_LANG: &str = "other";

#[derive(Debug, Clone, PartialEq)]
pub struct LangGateConfig {
    pub allowed: BTreeSet<String>,
    pub min_prob: f64,
}

impl Default for LangGateConfig {
    fn default() -> Self {
        LangGateConfig { allowed: ["en", "zh"].iter().map(|s| s.to_string()).collect(), min_prob: 0.65 }
    }
}

impl LangGateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_prob > 0.0 && self.min_prob < 1.0) {
            return Err(format!("min_prob must be in (0, 1), got {}", self.min_prob));
        }
        if self.allowed.is_empty() {
            return Err("allowed languages must not be empty".into());
        }
        Ok(())
    }
}

/// Character 2-, 3- and 4-grams (prefixed `c:`) of the first
/// [`MAX_LANG_CHARS`] characters of whitespace-normalized text.
pub fn featurize_lang(text: &str) -> Vec<String> {
    let chars: Vec<char> = text
        .split_whitespace()
        .flat_map(|w| std::iter::once(' ').chain(w.chars()))
        .skip(1)
        .take(MAX_LANG_CHARS)
        .collect();
    let mut out = Vec::new();
    for n in 2..=4 {
        for w in chars.windows(n) {
            let mut f = String::with_capacity(2 + 4 * n);
            f.push_str("c:");
            f.extend(w);
            out.push(f);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangPrediction {
    pub language: String,
    pub prob: f64,
    pub empty_input: bool,
}

pub fn predict_lang(model: &LinearTextClassifier, text: &str) -> Result<LangPrediction, ClassifierError> {
    model.expect_featurizer(LANGID_FEATURIZER)?;
    let p = model.predict(&featurize_lang(text));
    if p.empty_input {
        return Ok(LangPrediction { language: OTHER_LANG.into(), prob: p.probs[0], empty_input: true });
    }
    let i = p.argmax();
    Ok(LangPrediction { language: model.labels()[i].clone(), prob: p.probs[i], empty_input: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LangDropReason {
    Language,
    LowConfidence,
}

impl LangDropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            LangDropReason::Language => "language",
            LangDropReason::LowConfidence => "low_confidence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangDecision {
    pub prediction: LangPrediction,
    pub drop: Option<LangDropReason>,
}

impl LangDecision {
    pub fn keep(&self) -> bool {
        self.drop.is_none()
    }
}

/// Pure gate decision on the document's plain text.
pub fn decide_language(
    doc: &InterleavedDoc,
    model: &LinearTextClassifier,
    cfg: &LangGateConfig,
) -> Result<LangDecision, ClassifierError> {
    let prediction = predict_lang(model, &doc.plain_text())?;
    let drop = if !cfg.allowed.contains(&prediction.language) {
        Some(LangDropReason::Language)
    } else if prediction.prob < cfg.min_prob {
        Some(LangDropReason::LowConfidence)
    } else {
        None
    };
    Ok(LangDecision { prediction, drop })
}

/// Like [`decide_language`], and on keep records the language on the doc.
pub fn language_gate(
    doc: &mut InterleavedDoc,
    model: &LinearTextClassifier,
    cfg: &LangGateConfig,
) -> Result<LangDecision, ClassifierError> {
    let d = decide_language(doc, model, cfg)?;
    if d.keep() {
        doc.language = Some(d.prediction.language.clone());
    }
    Ok(d)
}

/// Trains a language model from `(text, label)` pairs; texts with no
/// features are skipped.
pub fn train_langid(samples: &[(String, String)], cfg: &TrainConfig) -> Result<LinearTextClassifier, ClassifierError> {
    let examples: Vec<Example> = samples
        .iter()
        .map(|(t, l)| Example::new(featurize_lang(t), l.clone()))
        .filter(|e| !e.features.is_empty())
        .collect();
    classifier::train(&examples, cfg, LANGID_FEATURIZER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::text_doc;
    use crate::synth::{lang_samples, synth_train_config, Split};
    use std::sync::OnceLock;

    fn set(v: &[String]) -> BTreeSet<String> {
        v.iter().cloned().collect()
    }

    #[test]
    fn ngram_enumeration() {
        assert_eq!(set(&featurize_lang("ab")), set(&["c:ab".into()]));
        assert_eq!(set(&featurize_lang("abc")), set(&["c:ab".into(), "c:bc".into(), "c:abc".into()]));
        assert!(featurize_lang("").is_empty());
        assert!(featurize_lang(" \n\t ").is_empty());
        assert_eq!(featurize_lang("a \n b"), featurize_lang("a b"));
    }

    #[test]
    fn prefix_bound() {
        let long = "x".repeat(10_000);
        assert_eq!(featurize_lang(&long).len(), 1999 + 1998 + 1997);
    }

    pub(crate) fn model() -> &'static LinearTextClassifier {
        static M: OnceLock<LinearTextClassifier> = OnceLock::new();
        M.get_or_init(|| {
            train_langid(&lang_samples(1, 600, Split::Train), &synth_train_config(11)).unwrap()
        })
    }

    #[test]
    fn reference_sentences() {
        let en = predict_lang(model(), "The derivative of a polynomial is computed term by term.").unwrap();
        assert_eq!(en.language, "en");
        assert!(en.prob > 0.9, "{en:?}");
        let zh = predict_lang(model(), "这是一个关于微积分的数学问题。").unwrap();
        assert_eq!(zh.language, "zh");
        assert!(zh.prob > 0.9, "{zh:?}");
    }

    #[test]
    fn empty_text_is_other_uniform() {
        let p = predict_lang(model(), "").unwrap();
        assert!(p.empty_input);
        assert_eq!(p.language, "other");
        assert!((p.prob - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn held_out_gate_accuracy() {
        let test = lang_samples(99, 100, Split::Test);
        let correct = test.iter().filter(|(t, l)| &predict_lang(model(), t).unwrap().language == l).count();
        assert!(correct as f64 / test.len() as f64 >= 0.95, "{correct}/300");
    }

    #[test]
    fn gate_rules() {
        let cfg = LangGateConfig::default();
        let mut d = text_doc("a", "The derivative of a polynomial is computed term by term.");
        let dec = language_gate(&mut d, model(), &cfg).unwrap();
        assert!(dec.keep());
        assert_eq!(d.language.as_deref(), Some("en"));

        let mut d = text_doc("b", "der die und das ist nicht la ville est toujours après");
        let dec = language_gate(&mut d, model(), &cfg).unwrap();
        assert_eq!(dec.drop, Some(LangDropReason::Language));
        assert_eq!(d.language, None);

        let strict = LangGateConfig { min_prob: 0.999_999_9, ..cfg };
        let mut d = text_doc("c", "house water");
        let dec = language_gate(&mut d, model(), &strict).unwrap();
        if dec.prediction.language == "en" {
            assert_eq!(dec.drop, Some(LangDropReason::LowConfidence));
        }
    }

    #[test]
    fn featurizer_mismatch() {
        let ex = vec![Example::new(vec!["w:a".into()], "math"), Example::new(vec!["w:b".into()], "nonmath")];
        let cfg = TrainConfig { n_buckets: 64, dim: 4, ..Default::default() };
        let m = classifier::train(&ex, &cfg, "math-word12-v1").unwrap();
        assert!(matches!(predict_lang(&m, "x"), Err(ClassifierError::FeaturizerMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(LangGateConfig::default().validate().is_ok());
        assert!(LangGateConfig { min_prob: 1.0, ..Default::default() }.validate().is_err());
        assert!(LangGateConfig { allowed: BTreeSet::new(), min_prob: 0.5 }.validate().is_err());
    }
}
