//! On-disk MinHash signature cache keyed by full-text hash.
//!
//! Layout: `MHSG1\n`, one JSON line of [`MinHashParams`], then fixed-width
//! records of `text_hash` followed by `n_perm` slot values, all `u64`
//! little-endian, sorted by text hash.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DedupError, MinHashParams, Permutations};
use crate::hashing::fnv1a64_str;

pub const CACHE_MAGIC: &str = "MHSG1";

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureCache {
    params: MinHashParams,
    entries: BTreeMap<u64, Vec<u64>>,
}

impl SignatureCache {
    pub fn new(params: MinHashParams) -> Self {
        SignatureCache { params, entries: BTreeMap::new() }
    }

    pub fn params(&self) -> &MinHashParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text_hash: u64) -> Option<&[u64]> {
        self.entries.get(&text_hash).map(Vec::as_slice)
    }

    /// Computes and stores signatures for texts not yet cached. Blank texts
    /// are skipped. Returns the number of new entries.
    pub fn fill<'a>(&mut self, texts: impl IntoIterator<Item = &'a str>) -> Result<usize, DedupError> {
        let perms = Permutations::new(self.params)?;
        let mut added = 0;
        for t in texts {
            if t.trim().is_empty() {
                continue;
            }
            let h = fnv1a64_str(t);
            if self.entries.contains_key(&h) {
                continue;
            }
            let sig = perms.signature_of_text("", t)?;
            self.entries.insert(h, sig.values);
            added += 1;
        }
        Ok(added)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), DedupError> {
        let mut out = BufWriter::new(out);
        out.write_all(CACHE_MAGIC.as_bytes())?;
        out.write_all(b"\n")?;
        serde_json::to_writer(&mut out, &self.params).map_err(|e| DedupError::Cache(e.to_string()))?;
        out.write_all(b"\n")?;
        for (h, values) in &self.entries {
            out.write_all(&h.to_le_bytes())?;
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DedupError> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, DedupError> {
        let mut r = BufReader::new(input);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line != format!("{CACHE_MAGIC}\n").as_bytes() {
            return Err(DedupError::Cache(format!("bad magic, expected \"{CACHE_MAGIC}\"")));
        }
        line.clear();
        r.read_until(b'\n', &mut line)?;
        let params: MinHashParams =
            serde_json::from_slice(line.trim_ascii_end()).map_err(|e| DedupError::Cache(e.to_string()))?;
        params.validate()?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let width = 8 * (params.n_perm + 1);
        if body.len() % width != 0 {
            return Err(DedupError::Cache(format!(
                "body of {} bytes is not a whole number of {width}-byte records",
                body.len()
            )));
        }
        let mut entries = BTreeMap::new();
        for rec in body.chunks_exact(width) {
            let mut words = rec.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()));
            let h = words.next().unwrap();
            entries.insert(h, words.collect());
        }
        Ok(SignatureCache { params, entries })
    }

    pub fn load(path: &Path) -> Result<Self, DedupError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedup::{dedup_pass, DedupPolicy};
    use crate::doc::test_support::text_doc;

    #[test]
    fn round_trip_and_reuse() {
        let p = MinHashParams::default();
        let mut c = SignatureCache::new(p);
        assert_eq!(c.fill(["a b c d e f", "x y z", "", "a b c d e f"]).unwrap(), 2);
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"MHSG1\n{"));
        let back = SignatureCache::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);

        let docs = vec![text_doc("b", "a b c d e f"), text_doc("a", "a b c d e f"), text_doc("c", "x y z")];
        let with = dedup_pass(docs.clone(), &p, &DedupPolicy::within_snapshot(), Some(&back)).unwrap();
        let without = dedup_pass(docs, &p, &DedupPolicy::within_snapshot(), None).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn truncated_record_rejected() {
        let mut c = SignatureCache::new(MinHashParams::default());
        c.fill(["one two three"]).unwrap();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        bytes.pop();
        assert!(matches!(SignatureCache::read_from(&bytes[..]), Err(DedupError::Cache(_))));
    }

    #[test]
    fn params_mismatch_rejected() {
        let c = SignatureCache::new(MinHashParams { seed: 5, ..Default::default() });
        let docs = vec![text_doc("a", "t")];
        assert!(dedup_pass(docs, &MinHashParams::default(), &DedupPolicy::within_snapshot(), Some(&c)).is_err());
    }
}
