//! Run configuration: one TOML file with a `[stage.<name>]` table per stage,
//! overridable through `MATHCRAWL_<STAGE>_<KEY>` environment variables.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::STAGE_ORDER;
use crate::classifier::read_model_meta;
use crate::dedup::{Keeper, MinHashParams};
use crate::images::{DownloadOptions, ImageFilterConfig};
use crate::ingest::is_snapshot_id;
use crate::langid::{LangGateConfig, LANGID_FEATURIZER};
use crate::mathfilter::{MathGateConfig, MATH_FEATURIZER, MATH_LABEL};
use crate::rules::{load_wordlist, RuleConfig};

pub const ENV_PREFIX: &str = "MATHCRAWL_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("environment override {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Jsonl,
    Warc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSource {
    pub path: PathBuf,
    /// Required for WARC; the default for records without one in JSONL.
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub format: InputFormat,
    pub sources: Vec<InputSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub langid: Option<PathBuf>,
    pub math_recall: Option<PathBuf>,
    pub math_precision: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggle {
    pub enabled: bool,
}

impl Default for Toggle {
    fn default() -> Self {
        Toggle { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanguageSection {
    pub enabled: bool,
    pub allowed: Vec<String>,
    pub min_prob: f64,
}

impl Default for LanguageSection {
    fn default() -> Self {
        let d = LangGateConfig::default();
        LanguageSection { enabled: true, allowed: d.allowed.into_iter().collect(), min_prob: d.min_prob }
    }
}

impl LanguageSection {
    pub fn gate_config(&self) -> LangGateConfig {
        LangGateConfig { allowed: self.allowed.iter().cloned().collect(), min_prob: self.min_prob }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MathSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub threshold: f64,
    #[serde(default = "default_max_token_chars")]
    pub max_token_chars: usize,
}

fn default_max_token_chars() -> usize {
    MathGateConfig::default().max_token_chars
}

fn recall_section() -> MathSection {
    let d = MathGateConfig::default();
    MathSection { enabled: true, threshold: d.recall_threshold, max_token_chars: d.max_token_chars }
}

fn precision_section() -> MathSection {
    let d = MathGateConfig::default();
    MathSection { enabled: true, threshold: d.precision_threshold, max_token_chars: d.max_token_chars }
}

impl MathSection {
    pub fn gate_config(&self) -> MathGateConfig {
        MathGateConfig { max_token_chars: self.max_token_chars, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupSection {
    pub enabled: bool,
    pub shingle_k: usize,
    pub n_perm: usize,
    pub bands: usize,
    pub rows: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    pub keeper: Keeper,
    /// Signature cache file, read when present and rewritten after the stage.
    pub signature_cache: Option<PathBuf>,
}

impl Default for DedupSection {
    fn default() -> Self {
        let p = MinHashParams::default();
        DedupSection {
            enabled: true,
            shingle_k: p.shingle_k,
            n_perm: p.n_perm,
            bands: p.bands,
            rows: p.rows,
            seed: None,
            keeper: Keeper::default(),
            signature_cache: None,
        }
    }
}

impl DedupSection {
    pub fn params(&self, run_seed: u64) -> MinHashParams {
        MinHashParams {
            shingle_k: self.shingle_k,
            n_perm: self.n_perm,
            bands: self.bands,
            rows: self.rows,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulesSection {
    pub enabled: bool,
    /// Replaces the built-in NSFW wordlist.
    pub nsfw_wordlist: Option<PathBuf>,
    pub lorem_short_chars: usize,
    pub punct_ratio_max: f64,
}

impl Default for RulesSection {
    fn default() -> Self {
        let d = RuleConfig::default();
        RulesSection { enabled: true, nsfw_wordlist: None, lorem_short_chars: d.lorem_short_chars, punct_ratio_max: d.punct_ratio_max }
    }
}

impl RulesSection {
    pub fn rule_config(&self) -> Result<RuleConfig, String> {
        let base = match &self.nsfw_wordlist {
            Some(p) => RuleConfig::with_wordlist(p).map_err(|e| e.to_string())?,
            None => RuleConfig::default(),
        };
        Ok(RuleConfig { lorem_short_chars: self.lorem_short_chars, punct_ratio_max: self.punct_ratio_max, ..base })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagesSection {
    pub enabled: bool,
    pub max_url_freq: usize,
    pub max_images_per_doc: usize,
    pub require_https: bool,
    pub keyword_blocklist: Vec<String>,
}

impl Default for ImagesSection {
    fn default() -> Self {
        let d = ImageFilterConfig::default();
        ImagesSection {
            enabled: true,
            max_url_freq: d.max_url_freq,
            max_images_per_doc: d.max_images_per_doc,
            require_https: d.require_https,
            keyword_blocklist: d.keyword_blocklist,
        }
    }
}

impl ImagesSection {
    pub fn filter_config(&self) -> ImageFilterConfig {
        ImageFilterConfig {
            max_url_freq: self.max_url_freq,
            max_images_per_doc: self.max_images_per_doc,
            require_https: self.require_https,
            keyword_blocklist: self.keyword_blocklist.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownloadSection {
    pub enabled: bool,
    pub concurrency: usize,
    pub per_host_limit: usize,
    pub timeout_secs: f64,
    pub max_bytes: u64,
    pub retries: u32,
    pub user_agent: String,
}

impl Default for DownloadSection {
    fn default() -> Self {
        let d = DownloadOptions::default();
        DownloadSection {
            enabled: false,
            concurrency: d.concurrency,
            per_host_limit: d.per_host_limit,
            timeout_secs: d.timeout.as_secs_f64(),
            max_bytes: d.max_bytes,
            retries: d.retries,
            user_agent: d.user_agent,
        }
    }
}

impl DownloadSection {
    pub fn options(&self) -> Result<DownloadOptions, String> {
        let timeout = Duration::try_from_secs_f64(self.timeout_secs).map_err(|e| format!("timeout_secs: {e}"))?;
        Ok(DownloadOptions {
            concurrency: self.concurrency,
            per_host_limit: self.per_host_limit,
            timeout,
            max_bytes: self.max_bytes,
            retries: self.retries,
            user_agent: self.user_agent.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfigs {
    #[serde(default)]
    pub language_gate: LanguageSection,
    #[serde(default = "recall_section")]
    pub math_recall: MathSection,
    #[serde(default)]
    pub dedup_within_snapshot: DedupSection,
    #[serde(default)]
    pub dedup_neighbor_pairs: DedupSection,
    #[serde(default)]
    pub url_dedup: Toggle,
    #[serde(default)]
    pub rules: RulesSection,
    #[serde(default = "precision_section")]
    pub math_precision: MathSection,
    #[serde(default)]
    pub images_filter: ImagesSection,
    #[serde(default)]
    pub build_manifest: Toggle,
    #[serde(default)]
    pub download: DownloadSection,
    /// Runs only after a download.
    #[serde(default)]
    pub reintegrate: Toggle,
}

impl Default for StageConfigs {
    fn default() -> Self {
        StageConfigs {
            language_gate: Default::default(),
            math_recall: recall_section(),
            dedup_within_snapshot: Default::default(),
            dedup_neighbor_pairs: Default::default(),
            url_dedup: Default::default(),
            rules: Default::default(),
            math_precision: precision_section(),
            images_filter: Default::default(),
            build_manifest: Default::default(),
            download: Default::default(),
            reintegrate: Default::default(),
        }
    }
}

fn default_seed() -> u64 {
    MinHashParams::default().seed
}

fn default_shards() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub n_shards: usize,
    #[serde(default)]
    pub models: ModelPaths,
    #[serde(default)]
    pub stage: StageConfigs,
}

impl PipelineConfig {
    /// Parses config text, applying overrides from `env` (pairs of variable
    /// name and value; unrelated names are ignored).
    pub fn from_toml_with_env<I, K, V>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in env {
            apply_override(&mut table, k.as_ref(), v.as_ref())?;
        }
        table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty::<(&str, &str)>())
    }

    /// Reads a config file, resolving relative paths against its directory
    /// and applying the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::from_toml_with_env(&text, std::env::vars())?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.input.sources {
            fix(&mut s.path);
        }
        fix(&mut self.output);
        for p in [&mut self.models.langid, &mut self.models.math_recall, &mut self.models.math_precision]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in [
            &mut self.stage.rules.nsfw_wordlist,
            &mut self.stage.dedup_within_snapshot.signature_cache,
            &mut self.stage.dedup_neighbor_pairs.signature_cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn is_enabled(&self, stage: &str) -> bool {
        let s = &self.stage;
        match stage {
            "ingest" | "extract" => true,
            "language_gate" => s.language_gate.enabled,
            "math_recall" => s.math_recall.enabled,
            "dedup_within_snapshot" => s.dedup_within_snapshot.enabled,
            "dedup_neighbor_pairs" => s.dedup_neighbor_pairs.enabled,
            "url_dedup" => s.url_dedup.enabled,
            "rules" => s.rules.enabled,
            "math_precision" => s.math_precision.enabled,
            "images_filter" => s.images_filter.enabled,
            "build_manifest" => s.build_manifest.enabled,
            "download" => s.download.enabled,
            "reintegrate" => s.reintegrate.enabled && s.download.enabled,
            _ => false,
        }
    }

    fn set_enabled(&mut self, stage: &str, on: bool) {
        let s = &mut self.stage;
        match stage {
            "language_gate" => s.language_gate.enabled = on,
            "math_recall" => s.math_recall.enabled = on,
            "dedup_within_snapshot" => s.dedup_within_snapshot.enabled = on,
            "dedup_neighbor_pairs" => s.dedup_neighbor_pairs.enabled = on,
            "url_dedup" => s.url_dedup.enabled = on,
            "rules" => s.rules.enabled = on,
            "math_precision" => s.math_precision.enabled = on,
            "images_filter" => s.images_filter.enabled = on,
            "build_manifest" => s.build_manifest.enabled = on,
            "download" => s.download.enabled = on,
            "reintegrate" => s.reintegrate.enabled = on,
            _ => {}
        }
    }

    /// Enables exactly the listed stages. Ingest and extract always run.
    pub fn select_stages<S: AsRef<str>>(&mut self, names: &[S]) -> Result<(), ConfigError> {
        let wanted: BTreeSet<&str> = names.iter().map(|s| s.as_ref().trim()).filter(|s| !s.is_empty()).collect();
        if let Some(bad) = wanted.iter().find(|n| !STAGE_ORDER.contains(n)) {
            return Err(ConfigError::UnknownStage(bad.to_string()));
        }
        for stage in STAGE_ORDER {
            self.set_enabled(stage, wanted.contains(stage));
        }
        Ok(())
    }

    /// Stages that will run, in execution order.
    pub fn planned_stages(&self) -> Vec<&'static str> {
        STAGE_ORDER.into_iter().filter(|s| self.is_enabled(s)).collect()
    }
}

const SECTIONS: [&str; 12] = [
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
    "models",
];

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `MATHCRAWL_MATH_RECALL_THRESHOLD=0.3` sets `stage.math_recall.threshold`;
/// `MATHCRAWL_MODELS_LANGID` sets `models.langid`; `MATHCRAWL_SEED`,
/// `MATHCRAWL_N_SHARDS` and `MATHCRAWL_OUTPUT` set top-level keys. Values are
/// TOML literals, falling back to a plain string.
fn apply_override(table: &mut toml::Table, var: &str, raw: &str) -> Result<(), ConfigError> {
    let Some(rest) = var.strip_prefix(ENV_PREFIX) else {
        return Ok(());
    };
    let rest = rest.to_ascii_lowercase();
    let value = parse_env_value(raw);
    if ["seed", "n_shards", "output"].contains(&rest.as_str()) {
        table.insert(rest, value);
        return Ok(());
    }
    let Some(section) = SECTIONS
        .iter()
        .filter(|s| rest.starts_with(&format!("{s}_")))
        .max_by_key(|s| s.len())
    else {
        return Err(ConfigError::Env { var: var.to_string(), reason: "no stage section matches".into() });
    };
    let key = rest[section.len() + 1..].to_string();
    let parent = if *section == "models" {
        table
    } else {
        table
            .entry("stage")
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Env { var: var.into(), reason: "`stage` is not a table".into() })?
    };
    parent
        .entry(*section)
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .ok_or_else(|| ConfigError::Env { var: var.into(), reason: format!("`{section}` is not a table") })?
        .insert(key, value);
    Ok(())
}

fn check_unit(v: &mut Vec<String>, name: &str, x: f64) {
    if !(0.0..=1.0).contains(&x) {
        v.push(format!("{name} must be in [0, 1], got {x}"));
    }
}

fn check_model(v: &mut Vec<String>, stage: &str, path: &Option<PathBuf>, featurizer: &str, label: Option<&str>) {
    let Some(path) = path else {
        v.push(format!("stage {stage} is enabled but no model path is configured"));
        return;
    };
    if !path.exists() {
        v.push(format!("model file {} does not exist", path.display()));
        return;
    }
    match read_model_meta(path) {
        Err(e) => v.push(format!("model file {}: {e}", path.display())),
        Ok(meta) => {
            if meta.featurizer_id != featurizer {
                v.push(format!(
                    "model {} has featurizer `{}`, stage {stage} expects `{featurizer}`",
                    path.display(),
                    meta.featurizer_id
                ));
            }
            if let Some(l) = label {
                if !meta.labels.iter().any(|x| x == l) {
                    v.push(format!("model {} has no `{l}` label", path.display()));
                }
            }
        }
    }
}

fn check_dedup(v: &mut Vec<String>, stage: &str, d: &DedupSection, seed: u64) {
    if d.bands * d.rows != d.n_perm {
        v.push(format!("{stage}: bands×rows ≠ n_perm ({}×{} ≠ {})", d.bands, d.rows, d.n_perm));
    } else if let Err(e) = d.params(seed).validate() {
        v.push(format!("{stage}: {e}"));
    }
}

/// All violations of a config; empty means valid.
pub fn validate(cfg: &PipelineConfig) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.input.sources.is_empty() {
        v.push("input.sources is empty".to_string());
    }
    for s in &cfg.input.sources {
        if !s.path.exists() {
            v.push(format!("input file {} does not exist", s.path.display()));
        }
        match &s.snapshot {
            Some(id) if !is_snapshot_id(id) => v.push(format!("snapshot id `{id}` does not match CC-MAIN-YYYY-WW")),
            None if cfg.input.format == InputFormat::Warc => {
                v.push(format!("WARC input {} needs a snapshot id", s.path.display()))
            }
            _ => {}
        }
    }
    if cfg.n_shards == 0 {
        v.push("n_shards must be >= 1".to_string());
    }
    let st = &cfg.stage;
    if st.language_gate.enabled {
        if let Err(e) = st.language_gate.gate_config().validate() {
            v.push(format!("language_gate: {e}"));
        }
        check_model(&mut v, "language_gate", &cfg.models.langid, LANGID_FEATURIZER, None);
    }
    for (name, sec, model) in [
        ("math_recall", &st.math_recall, &cfg.models.math_recall),
        ("math_precision", &st.math_precision, &cfg.models.math_precision),
    ] {
        if sec.enabled {
            check_unit(&mut v, &format!("{name}.threshold"), sec.threshold);
            if sec.max_token_chars == 0 {
                v.push(format!("{name}.max_token_chars must be >= 1"));
            }
            check_model(&mut v, name, model, MATH_FEATURIZER, Some(MATH_LABEL));
        }
    }
    for (name, sec) in [("dedup_within_snapshot", &st.dedup_within_snapshot), ("dedup_neighbor_pairs", &st.dedup_neighbor_pairs)] {
        if sec.enabled {
            check_dedup(&mut v, name, sec, cfg.seed);
        }
    }
    if st.rules.enabled {
        if let Some(p) = &st.rules.nsfw_wordlist {
            if let Err(e) = load_wordlist(p) {
                v.push(format!("rules: {e}"));
            }
        }
        if let Err(e) = (RuleConfig { punct_ratio_max: st.rules.punct_ratio_max, ..Default::default() }).validate() {
            v.push(format!("rules: {e}"));
        }
    }
    if st.images_filter.enabled {
        if let Err(e) = st.images_filter.filter_config().validate() {
            v.push(format!("images_filter: {e}"));
        }
    }
    if st.download.enabled {
        if !st.build_manifest.enabled {
            v.push("download requires build_manifest".to_string());
        }
        match st.download.options() {
            Ok(o) => {
                if let Err(e) = o.validate() {
                    v.push(format!("download: {e}"));
                }
            }
            Err(e) => v.push(format!("download: {e}")),
        }
    }
    v
}
