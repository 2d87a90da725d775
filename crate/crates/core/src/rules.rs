//! Rule-based document filters, applied in a fixed order; the first failing
//! rule names the drop.

use std::collections::BTreeSet;
use std::path::Path;

use crate::doc::InterleavedDoc;

pub const DEFAULT_NSFW_LIST: &str = include_str!("../data/nsfw_words.txt");
pub const ASCII_PUNCTUATION: &str = r##"!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~"##;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Lorem,
    Punctuation,
    Nsfw,
    Unicode,
}

impl Rule {
    pub const ORDER: [Rule; 4] = [Rule::Lorem, Rule::Punctuation, Rule::Nsfw, Rule::Unicode];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Lorem => "lorem",
            Rule::Punctuation => "punctuation",
            Rule::Nsfw => "nsfw",
            Rule::Unicode => "unicode",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuleConfigError {
    #[error("cannot read NSFW wordlist {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("NSFW wordlist {0} has no entries")]
    EmptyWordlist(String),
    #[error("{0}")]
    Invalid(String),
}

/// Parses a wordlist: one token per line, `#` comments, blank lines ignored.
pub fn parse_wordlist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_wordlist(path: &Path) -> Result<BTreeSet<String>, RuleConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| RuleConfigError::Unreadable { path: path.display().to_string(), source })?;
    let words = parse_wordlist(&text);
    if words.is_empty() {
        return Err(RuleConfigError::EmptyWordlist(path.display().to_string()));
    }
    Ok(words)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleConfig {
    pub lorem_short_chars: usize,
    pub punct_ratio_max: f64,
    pub nsfw_words: BTreeSet<String>,
    pub punctuation_set: BTreeSet<char>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            lorem_short_chars: 500,
            punct_ratio_max: 0.3,
            nsfw_words: parse_wordlist(DEFAULT_NSFW_LIST),
            punctuation_set: ASCII_PUNCTUATION.chars().collect(),
        }
    }
}

impl RuleConfig {
    pub fn with_wordlist(path: &Path) -> Result<Self, RuleConfigError> {
        Ok(RuleConfig { nsfw_words: load_wordlist(path)?, ..Default::default() })
    }

    pub fn validate(&self) -> Result<(), RuleConfigError> {
        if !(self.punct_ratio_max > 0.0 && self.punct_ratio_max <= 1.0) {
            return Err(RuleConfigError::Invalid(format!("punct_ratio_max must be in (0, 1], got {}", self.punct_ratio_max)));
        }
        Ok(())
    }
}

/// Punctuation characters over non-whitespace characters; 0 for blank text.
pub fn punctuation_ratio(text: &str, punctuation_set: &BTreeSet<char>) -> f64 {
    let mut total = 0usize;
    let mut punct = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if punctuation_set.contains(&c) {
            punct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        punct as f64 / total as f64
    }
}

fn has_nsfw_token(text: &str, words: &BTreeSet<String>) -> bool {
    text.split_whitespace().any(|raw| {
        let tok = raw.to_lowercase();
        let tok = tok.trim_matches(|c: char| !c.is_alphanumeric());
        !tok.is_empty() && words.contains(tok)
    })
}

/// The first failing rule, or `None` to keep.
pub fn apply_rules(doc: &InterleavedDoc, cfg: &RuleConfig) -> Option<Rule> {
    let text = doc.plain_text();
    if text.chars().count() < cfg.lorem_short_chars && text.to_lowercase().contains("lorem ipsum") {
        return Some(Rule::Lorem);
    }
    if doc.language.as_deref() == Some("en") && punctuation_ratio(&text, &cfg.punctuation_set) > cfg.punct_ratio_max {
        return Some(Rule::Punctuation);
    }
    if has_nsfw_token(&text, &cfg.nsfw_words) {
        return Some(Rule::Nsfw);
    }
    if text.contains('\u{FFFD}') {
        return Some(Rule::Unicode);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::text_doc;
    use proptest::prelude::*;

    fn en(text: &str) -> InterleavedDoc {
        let mut d = text_doc("d", text);
        d.language = Some("en".into());
        d
    }

    #[test]
    fn ratio_reference() {
        let p = RuleConfig::default().punctuation_set;
        assert_eq!(p.len(), 32);
        assert_eq!(punctuation_ratio("abc.", &p), 0.25);
        assert_eq!(punctuation_ratio("!!!", &p), 1.0);
        assert_eq!(punctuation_ratio("   ", &p), 0.0);
        assert_eq!(punctuation_ratio("。，", &p), 0.0);
    }

    #[test]
    fn lorem_short_and_long() {
        let cfg = RuleConfig::default();
        let short = en("Some filler text here: Lorem Ipsum dolor sit amet.");
        assert_eq!(apply_rules(&short, &cfg), Some(Rule::Lorem));
        let long = en(&format!("lorem ipsum {}", "real content words ".repeat(270)));
        assert!(long.plain_text().len() >= 5000);
        assert_eq!(apply_rules(&long, &cfg), None);
    }

    #[test]
    fn punctuation_english_only() {
        let cfg = RuleConfig::default();
        assert_eq!(apply_rules(&en("a!!!!!!!!!"), &cfg), Some(Rule::Punctuation));
        let mut zh = text_doc("z", "!!!!!!!!!a");
        zh.language = Some("zh".into());
        assert_eq!(apply_rules(&zh, &cfg), None);
    }

    #[test]
    fn nsfw_whole_token() {
        let cfg = RuleConfig::default();
        assert_eq!(apply_rules(&en("this page has PORN. on it"), &cfg), Some(Rule::Nsfw));
        assert_eq!(apply_rules(&en("pornographic is not an exact token"), &cfg), None);
    }

    #[test]
    fn unicode_and_order() {
        let cfg = RuleConfig::default();
        assert_eq!(apply_rules(&en("caf\u{FFFD} menu"), &cfg), Some(Rule::Unicode));
        assert_eq!(apply_rules(&en("lorem ipsum xxx"), &cfg), Some(Rule::Lorem));
    }

    #[test]
    fn wordlist_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.txt");
        std::fs::write(&p, "# comment\n\nFoo\nbar # trailing\n").unwrap();
        assert_eq!(load_wordlist(&p).unwrap(), ["bar".to_string(), "foo".to_string()].into());
        std::fs::write(&p, "# only comments\n").unwrap();
        assert!(matches!(load_wordlist(&p), Err(RuleConfigError::EmptyWordlist(_))));
        assert!(matches!(load_wordlist(&dir.path().join("missing")), Err(RuleConfigError::Unreadable { .. })));
    }

    proptest! {
        #[test]
        fn ratio_in_unit_interval(s in "\\PC{0,40}") {
            let r = punctuation_ratio(&s, &RuleConfig::default().punctuation_set);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
