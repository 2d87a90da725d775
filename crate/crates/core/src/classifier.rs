//! Hashed-feature linear text classifier: mean of feature embeddings, one
//! linear layer, softmax. Trained by single-threaded SGD with a linearly
//! decaying learning rate; fully deterministic for a given seed.
//!
//! Model file layout: the 5 magic bytes `MCLF1`, a newline, one JSON
//! metadata line, then little-endian `f32` arrays for the embedding table
//! (`n_buckets x dim`, row-major) and the output weights (`dim x n_classes`).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::fnv1a64_str;

pub const MODEL_MAGIC: &str = "MCLF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr0: f64,
    pub seed: u64,
    pub n_buckets: usize,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 5, lr0: 0.1, seed: 0, n_buckets: 1 << 21, dim: 16 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs < 1 {
            return Err(ClassifierError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(ClassifierError::InvalidConfig("lr0 must be > 0".into()));
        }
        if self.n_buckets == 0 || self.n_buckets > u32::MAX as usize {
            return Err(ClassifierError::InvalidConfig("n_buckets must be in 1..=2^32-1".into()));
        }
        if self.dim == 0 {
            return Err(ClassifierError::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One labelled training document as a feature multiset.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<String>,
    pub label: String,
}

impl Example {
    pub fn new(features: Vec<String>, label: impl Into<String>) -> Self {
        Example { features, label: label.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("degenerate corpus: need at least 2 distinct labels, found {0}")]
    DegenerateCorpus(usize),
    #[error("example {0} has no features")]
    EmptyExample(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("featurizer mismatch: model was trained with `{found}`, caller expects `{expected}`")]
    FeaturizerMismatch { expected: String, found: String },
    #[error("model has no class `{0}`")]
    UnknownLabel(String),
    #[error("bad magic: expected \"{MODEL_MAGIC}\", found {found:?}")]
    BadMagic { found: String },
    #[error("bad model metadata: {0}")]
    BadMetadata(String),
    #[error("truncated {section} section: expected {expected} bytes, found {actual}")]
    Truncated { section: &'static str, expected: u64, actual: u64 },
    #[error("{0} trailing bytes after weights")]
    TrailingBytes(u64),
    #[error("model contains non-finite weights")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Softmax output over the model's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Set when the input had no features; `probs` is then uniform.
    pub empty_input: bool,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub n_buckets: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub labels: Vec<String>,
    pub featurizer_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTextClassifier {
    meta: ModelMeta,
    embeddings: Vec<f32>,
    output: Vec<f32>,
}

/// Bucket of a feature string.
#[inline]
pub fn feature_bucket(feature: &str, n_buckets: usize) -> u32 {
    (fnv1a64_str(feature) % n_buckets as u64) as u32
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Trains a model; see [`train_with_report`].
pub fn train(examples: &[Example], cfg: &TrainConfig, featurizer_id: &str) -> Result<LinearTextClassifier, ClassifierError> {
    train_with_report(examples, cfg, featurizer_id).map(|(m, _)| m)
}

pub fn train_with_report(
    examples: &[Example],
    cfg: &TrainConfig,
    featurizer_id: &str,
) -> Result<(LinearTextClassifier, TrainReport), ClassifierError> {
    cfg.validate()?;
    if let Some(i) = examples.iter().position(|e| e.features.is_empty()) {
        return Err(ClassifierError::EmptyExample(i));
    }
    let mut labels: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(ClassifierError::DegenerateCorpus(labels.len()));
    }
    let n_classes = labels.len();
    let dim = cfg.dim;

    let data: Vec<(Vec<u32>, usize)> = examples
        .iter()
        .map(|e| {
            let buckets = e.features.iter().map(|f| feature_bucket(f, cfg.n_buckets)).collect();
            let class = labels.binary_search(&e.label).expect("label collected above");
            (buckets, class)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / dim as f32;
    let embeddings: Vec<f32> = (0..cfg.n_buckets * dim).map(|_| rng.random_range(-bound..=bound)).collect();
    let output = vec![0f32; dim * n_classes];

    let mut model = LinearTextClassifier {
        meta: ModelMeta {
            n_buckets: cfg.n_buckets,
            dim,
            n_classes,
            labels,
            featurizer_id: featurizer_id.to_string(),
            seed: cfg.seed,
        },
        embeddings,
        output,
    };

    let total_steps = (cfg.epochs as u64 * data.len() as u64).max(1) as f64;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut hidden = vec![0f32; dim];
    let mut grad_hidden = vec![0f32; dim];
    let mut logits = vec![0f64; n_classes];
    let mut report = TrainReport::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = (cfg.lr0 * (1.0 - step as f64 / total_steps)) as f32;
            step += 1;
            let (buckets, class) = &data[i];
            model.sgd_step(buckets, *class, lr, &mut hidden, &mut grad_hidden, &mut logits);
        }
        let loss = data.iter().map(|(b, c)| -model.predict_buckets(b).probs[*c].max(1e-300).ln()).sum::<f64>()
            / data.len() as f64;
        report.epoch_losses.push(loss);
    }

    if !model.all_finite() {
        return Err(ClassifierError::NonFinite);
    }
    Ok((model, report))
}

impl LinearTextClassifier {
    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn labels(&self) -> &[String] {
        &self.meta.labels
    }

    pub fn featurizer_id(&self) -> &str {
        &self.meta.featurizer_id
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn output_weights(&self) -> &[f32] {
        &self.output
    }

    pub fn label_index(&self, label: &str) -> Result<usize, ClassifierError> {
        self.meta
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ClassifierError::UnknownLabel(label.to_string()))
    }

    pub fn expect_featurizer(&self, expected: &str) -> Result<(), ClassifierError> {
        if self.meta.featurizer_id != expected {
            return Err(ClassifierError::FeaturizerMismatch {
                expected: expected.to_string(),
                found: self.meta.featurizer_id.clone(),
            });
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.embeddings.iter().chain(&self.output).all(|w| w.is_finite())
    }

    fn mean_embedding(&self, buckets: &[u32], hidden: &mut [f32]) {
        let dim = self.meta.dim;
        hidden.iter_mut().for_each(|h| *h = 0.0);
        for &b in buckets {
            let row = &self.embeddings[b as usize * dim..(b as usize + 1) * dim];
            for (h, e) in hidden.iter_mut().zip(row) {
                *h += e;
            }
        }
        let inv = 1.0 / buckets.len() as f32;
        hidden.iter_mut().for_each(|h| *h *= inv);
    }

    fn sgd_step(
        &mut self,
        buckets: &[u32],
        class: usize,
        lr: f32,
        hidden: &mut [f32],
        grad_hidden: &mut [f32],
        logits: &mut [f64],
    ) {
        let dim = self.meta.dim;
        let n_classes = self.meta.n_classes;
        self.mean_embedding(buckets, hidden);
        for (c, l) in logits.iter_mut().enumerate() {
            *l = (0..dim).map(|d| hidden[d] as f64 * self.output[d * n_classes + c] as f64).sum();
        }
        softmax_in_place(logits);

        grad_hidden.iter_mut().for_each(|g| *g = 0.0);
        for c in 0..n_classes {
            let g = (logits[c] - if c == class { 1.0 } else { 0.0 }) as f32;
            for d in 0..dim {
                let w = &mut self.output[d * n_classes + c];
                grad_hidden[d] += *w * g;
                *w -= lr * hidden[d] * g;
            }
        }
        let scale = lr / buckets.len() as f32;
        for &b in buckets {
            let row = &mut self.embeddings[b as usize * dim..(b as usize + 1) * dim];
            for (e, g) in row.iter_mut().zip(grad_hidden.iter()) {
                *e -= scale * g;
            }
        }
    }

    pub fn predict_buckets(&self, buckets: &[u32]) -> Prediction {
        let n_classes = self.meta.n_classes;
        if buckets.is_empty() {
            return Prediction { probs: vec![1.0 / n_classes as f64; n_classes], empty_input: true };
        }
        let dim = self.meta.dim;
        let mut hidden = vec![0f64; dim];
        for &b in buckets {
            let row = &self.embeddings[b as usize * dim..(b as usize + 1) * dim];
            for (h, e) in hidden.iter_mut().zip(row) {
                *h += *e as f64;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        hidden.iter_mut().for_each(|h| *h *= inv);
        let mut logits: Vec<f64> = (0..n_classes)
            .map(|c| (0..dim).map(|d| hidden[d] * self.output[d * n_classes + c] as f64).sum())
            .collect();
        softmax_in_place(&mut logits);
        Prediction { probs: logits, empty_input: false }
    }

    /// Class probabilities for a feature multiset.
    pub fn predict<S: AsRef<str>>(&self, features: &[S]) -> Prediction {
        let buckets: Vec<u32> = features.iter().map(|f| feature_bucket(f.as_ref(), self.meta.n_buckets)).collect();
        self.predict_buckets(&buckets)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ClassifierError> {
        out.write_all(MODEL_MAGIC.as_bytes())?;
        out.write_all(b"\n")?;
        serde_json::to_writer(&mut out, &self.meta).map_err(|e| ClassifierError::BadMetadata(e.to_string()))?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.embeddings.len().min(1 << 20) * 4);
        for chunk in self.embeddings.chunks(1 << 18).chain(std::iter::once(&self.output[..])) {
            buf.clear();
            for w in chunk {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, ClassifierError> {
        let mut r = BufReader::new(input);
        let meta = read_meta(&mut r)?;
        let embeddings = read_f32s(&mut r, meta.n_buckets * meta.dim, "embeddings")?;
        let output = read_f32s(&mut r, meta.dim * meta.n_classes, "output weights")?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ClassifierError::TrailingBytes(rest.len() as u64));
        }
        let model = LinearTextClassifier { meta, embeddings, output };
        if !model.all_finite() {
            return Err(ClassifierError::NonFinite);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn read_meta<R: BufRead>(r: &mut R) -> Result<ModelMeta, ClassifierError> {
    let mut magic = [0u8; 6];
    let mut got = 0;
    while got < magic.len() {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < 6 || &magic[..5] != MODEL_MAGIC.as_bytes() || magic[5] != b'\n' {
        return Err(ClassifierError::BadMagic { found: String::from_utf8_lossy(&magic[..got.min(5)]).into_owned() });
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(ClassifierError::BadMetadata("metadata line is not newline-terminated".into()));
    }
    let meta: ModelMeta =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| ClassifierError::BadMetadata(e.to_string()))?;
    let mut labels = meta.labels.clone();
    labels.sort();
    labels.dedup();
    if meta.n_classes < 2 || meta.labels.len() != meta.n_classes || labels.len() != meta.n_classes {
        return Err(ClassifierError::BadMetadata("labels must be distinct and match n_classes >= 2".into()));
    }
    if meta.n_buckets == 0 || meta.dim == 0 {
        return Err(ClassifierError::BadMetadata("n_buckets and dim must be positive".into()));
    }
    Ok(meta)
}

fn read_f32s<R: Read>(r: &mut R, count: usize, section: &'static str) -> Result<Vec<f32>, ClassifierError> {
    let expected = count as u64 * 4;
    let mut bytes = Vec::with_capacity(count * 4);
    let actual = r.take(expected).read_to_end(&mut bytes)? as u64;
    if actual < expected {
        return Err(ClassifierError::Truncated { section, expected, actual });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Reads only the metadata of a model file.
pub fn read_model_meta(path: &Path) -> Result<ModelMeta, ClassifierError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_meta(&mut r)
}
