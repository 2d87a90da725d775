//! Word shingles, MinHash signatures and LSH band keys.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DedupError;
use crate::hashing::{fnv1a64_str, Fnv1a};

/// Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// `x mod (2^61 - 1)` for `x < 2^122`, by folding high bits.
#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let s = (x & p) + (x >> 61);
    let s = (s & p) + (s >> 61);
    let s = s as u64;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinHashParams {
    pub shingle_k: usize,
    pub n_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for MinHashParams {
    fn default() -> Self {
        MinHashParams { shingle_k: 5, n_perm: 112, bands: 14, rows: 8, seed: 1 }
    }
}

impl MinHashParams {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.shingle_k < 1 {
            return Err(DedupError::Params("shingle_k must be >= 1".into()));
        }
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows != self.n_perm {
            return Err(DedupError::Params(format!(
                "bands x rows must equal n_perm ({} x {} != {})",
                self.bands, self.rows, self.n_perm
            )));
        }
        Ok(())
    }

    /// Jaccard similarity at the steepest point of the banding s-curve.
    pub fn threshold(&self) -> f64 {
        (1.0 / self.bands as f64).powf(1.0 / self.rows as f64)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        for v in [self.shingle_k as u64, self.n_perm as u64, self.bands as u64, self.rows as u64, self.seed] {
            h.write_u64(v);
        }
        h.finish()
    }
}

/// Lowercased whitespace tokens joined into consecutive `k`-grams. Texts with
/// fewer than `k` tokens give one shingle holding all of them.
pub fn shingles(text: &str, k: usize) -> HashSet<String> {
    let toks: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if toks.is_empty() {
        return HashSet::new();
    }
    if toks.len() < k {
        return HashSet::from([toks.join(" ")]);
    }
    toks.windows(k).map(|w| w.join(" ")).collect()
}

/// FNV-1a hashes of [`shingles`], computed without building the strings.
pub fn shingle_hashes(text: &str, k: usize) -> Vec<u64> {
    let toks: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if toks.is_empty() {
        return Vec::new();
    }
    let width = k.min(toks.len());
    let mut out: Vec<u64> = toks
        .windows(width)
        .map(|w| {
            let mut h = Fnv1a::default();
            for (i, t) in w.iter().enumerate() {
                if i > 0 {
                    h.write(b" ");
                }
                h.write(t.as_bytes());
            }
            h.finish()
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Universal hash family `h_i(x) = (a_i * x + b_i) mod (2^61 - 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutations {
    params: MinHashParams,
    coeffs: Vec<(u64, u64)>,
}

impl Permutations {
    pub fn new(params: MinHashParams) -> Result<Self, DedupError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let coeffs = (0..params.n_perm)
            .map(|_| (rng.random_range(1..MERSENNE_61), rng.random_range(0..MERSENNE_61)))
            .collect();
        Ok(Permutations { params, coeffs })
    }

    pub fn params(&self) -> &MinHashParams {
        &self.params
    }

    pub fn coeffs(&self) -> &[(u64, u64)] {
        &self.coeffs
    }

    /// Signature of a set of 64-bit element hashes.
    pub fn signature_of_hashes(&self, doc_id: &str, hashes: &[u64]) -> Result<MinHashSignature, DedupError> {
        if hashes.is_empty() {
            return Err(DedupError::EmptyDocument(doc_id.to_string()));
        }
        let mut values = vec![u64::MAX; self.params.n_perm];
        for &h in hashes {
            let x = (h % MERSENNE_61) as u128;
            for (v, &(a, b)) in values.iter_mut().zip(&self.coeffs) {
                let y = mod_mersenne(a as u128 * x + b as u128);
                if y < *v {
                    *v = y;
                }
            }
        }
        Ok(self.from_values(doc_id, values))
    }

    pub fn signature(&self, doc_id: &str, shingles: &HashSet<String>) -> Result<MinHashSignature, DedupError> {
        let hashes: Vec<u64> = shingles.iter().map(|s| fnv1a64_str(s)).collect();
        self.signature_of_hashes(doc_id, &hashes)
    }

    pub fn signature_of_text(&self, doc_id: &str, text: &str) -> Result<MinHashSignature, DedupError> {
        self.signature_of_hashes(doc_id, &shingle_hashes(text, self.params.shingle_k))
    }

    /// Rebuilds a signature (with band keys) from stored slot values.
    pub fn from_values(&self, doc_id: &str, values: Vec<u64>) -> MinHashSignature {
        let band_keys = band_keys(&values, self.params.rows);
        MinHashSignature { doc_id: doc_id.to_string(), values, band_keys, params_id: self.params.fingerprint() }
    }
}

fn band_keys(values: &[u64], rows: usize) -> Vec<u64> {
    values
        .chunks(rows)
        .map(|band| {
            let mut h = Fnv1a::default();
            for &v in band {
                h.write_u64(v);
            }
            h.finish()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub values: Vec<u64>,
    /// `band_keys[j]` hashes `values[j*rows..(j+1)*rows]`.
    pub band_keys: Vec<u64>,
    params_id: u64,
}

impl MinHashSignature {
    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    /// Fraction of equal slots.
    pub fn estimate_jaccard(&self, other: &MinHashSignature) -> f64 {
        let eq = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        eq as f64 / self.values.len().max(1) as f64
    }

    /// Indices of bands whose keys match.
    pub fn shared_bands(&self, other: &MinHashSignature) -> Vec<usize> {
        self.band_keys
            .iter()
            .zip(&other.band_keys)
            .enumerate()
            .filter(|(_, (a, b))| a == b)
            .map(|(i, _)| i)
            .collect()
    }
}
