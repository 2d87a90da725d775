//! Near-duplicate removal with MinHash LSH, scoped per snapshot and per
//! neighbouring snapshot pair, plus exact URL deduplication.

mod cache;
mod minhash;
mod url;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::InterleavedDoc;
use crate::hashing::fnv1a64_str;

pub use cache::SignatureCache;
pub use minhash::{shingle_hashes, shingles, MinHashParams, MinHashSignature, Permutations, MERSENNE_61};
pub use url::{url_dedup, url_key, UrlDrop, UrlDedupOutcome};

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error("invalid MinHash params: {0}")]
    Params(String),
    #[error("empty document: {0}")]
    EmptyDocument(String),
    #[error("signatures built with different params")]
    MixedParams,
    #[error("scope violation: {0}")]
    Scope(String),
    #[error("signature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WithinSnapshot,
    NeighborPairs,
}

/// Which member of a duplicate cluster survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keeper {
    /// Smallest `(snapshot_id, id)`.
    #[default]
    EarliestSnapshot,
    /// Largest snapshot, then smallest id.
    LatestSnapshot,
}

impl Keeper {
    pub fn cmp(self, a: &InterleavedDoc, b: &InterleavedDoc) -> Ordering {
        match self {
            Keeper::EarliestSnapshot => (&a.snapshot_id, &a.id).cmp(&(&b.snapshot_id, &b.id)),
            Keeper::LatestSnapshot => b.snapshot_id.cmp(&a.snapshot_id).then_with(|| a.id.cmp(&b.id)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupPolicy {
    pub scope: Scope,
    pub keeper: Keeper,
}

impl DedupPolicy {
    pub fn within_snapshot() -> Self {
        DedupPolicy { scope: Scope::WithinSnapshot, keeper: Keeper::default() }
    }

    pub fn neighbor_pairs() -> Self {
        DedupPolicy { scope: Scope::NeighborPairs, keeper: Keeper::default() }
    }
}

/// Minimal union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// Clusters of two or more signature indices, each sorted, ordered by
    /// their smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub singletons: usize,
}

/// Joins signatures sharing any band key. Each band's key table is built
/// independently; the edges are merged single-threaded.
pub fn cluster(signatures: &[MinHashSignature], params: &MinHashParams) -> Result<Clustering, DedupError> {
    params.validate()?;
    let Some(first) = signatures.first() else {
        return Ok(Clustering { clusters: Vec::new(), singletons: 0 });
    };
    if signatures.iter().any(|s| s.params_id() != first.params_id() || s.band_keys.len() != params.bands) {
        return Err(DedupError::MixedParams);
    }
    let edges: Vec<Vec<(usize, usize)>> = (0..params.bands)
        .into_par_iter()
        .map(|band| {
            let mut table: HashMap<u64, usize> = HashMap::with_capacity(signatures.len());
            let mut edges = Vec::new();
            for (i, s) in signatures.iter().enumerate() {
                match table.get(&s.band_keys[band]) {
                    Some(&j) => edges.push((j, i)),
                    None => {
                        table.insert(s.band_keys[band], i);
                    }
                }
            }
            edges
        })
        .collect();
    let mut uf = UnionFind::new(signatures.len());
    for (a, b) in edges.into_iter().flatten() {
        uf.union(a, b);
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..signatures.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    let singletons = groups.values().filter(|g| g.len() == 1).count();
    let mut clusters: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > 1).collect();
    clusters.sort_by_key(|g| g[0]);
    Ok(Clustering { clusters, singletons })
}

/// One document removed as a near-duplicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupDrop {
    pub dropped_id: String,
    pub kept_id: String,
    /// Bands whose keys the dropped doc shares with the keeper; empty when
    /// the two are linked only through other cluster members.
    pub shared_bands: Vec<usize>,
    /// Full texts hash equal.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub survivors: Vec<InterleavedDoc>,
    pub drops: Vec<DedupDrop>,
}

fn check_scope(docs: &[InterleavedDoc], scope: Scope) -> Result<(), DedupError> {
    let snaps: BTreeSet<&str> = docs.iter().map(|d| d.snapshot_id.as_str()).collect();
    match scope {
        Scope::WithinSnapshot if snaps.len() > 1 => {
            Err(DedupError::Scope(format!("within_snapshot pass given {} snapshots", snaps.len())))
        }
        Scope::NeighborPairs if !docs.is_empty() && snaps.len() != 2 => {
            Err(DedupError::Scope(format!("neighbor_pairs pass needs exactly 2 snapshots, got {}", snaps.len())))
        }
        _ => Ok(()),
    }
}

/// One dedup pass. Documents without text are never clustered. Exact text
/// duplicates share one signature computation.
pub fn dedup_pass(
    docs: Vec<InterleavedDoc>,
    params: &MinHashParams,
    policy: &DedupPolicy,
    cache: Option<&SignatureCache>,
) -> Result<DedupOutcome, DedupError> {
    let (dropped, drops) = dedup_flags(&docs, params, policy, cache)?;
    Ok(DedupOutcome { survivors: retain_unflagged(docs, &dropped), drops })
}

fn retain_unflagged(docs: Vec<InterleavedDoc>, dropped: &[bool]) -> Vec<InterleavedDoc> {
    docs.into_iter().zip(dropped).filter(|(_, d)| !**d).map(|(doc, _)| doc).collect()
}

fn dedup_flags(
    docs: &[InterleavedDoc],
    params: &MinHashParams,
    policy: &DedupPolicy,
    cache: Option<&SignatureCache>,
) -> Result<(Vec<bool>, Vec<DedupDrop>), DedupError> {
    check_scope(docs, policy.scope)?;
    let perms = Permutations::new(*params)?;
    if let Some(c) = cache {
        if c.params() != params {
            return Err(DedupError::MixedParams);
        }
    }

    let texts: Vec<String> = docs.par_iter().map(InterleavedDoc::plain_text).collect();
    let text_hashes: Vec<u64> = texts.par_iter().map(|t| fnv1a64_str(t)).collect();
    let candidates: Vec<usize> = (0..docs.len()).filter(|&i| !texts[i].trim().is_empty()).collect();

    let mut first_by_hash: HashMap<u64, usize> = HashMap::new();
    let mut representative = Vec::with_capacity(candidates.len());
    let mut unique = Vec::new();
    for &i in &candidates {
        let slot = *first_by_hash.entry(text_hashes[i]).or_insert_with(|| {
            unique.push(i);
            unique.len() - 1
        });
        representative.push(slot);
    }

    let sigs: Vec<MinHashSignature> = unique
        .par_iter()
        .map(|&i| match cache.and_then(|c| c.get(text_hashes[i])) {
            Some(values) => Ok(perms.from_values(&docs[i].id, values.to_vec())),
            None => perms.signature_of_text(&docs[i].id, &texts[i]),
        })
        .collect::<Result<_, _>>()?;
    let clustering = cluster(&sigs, params)?;

    let mut uf = UnionFind::new(candidates.len());
    let mut by_unique: Vec<Vec<usize>> = vec![Vec::new(); unique.len()];
    for (ci, &u) in representative.iter().enumerate() {
        by_unique[u].push(ci);
    }
    for members in &by_unique {
        for w in members.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    for c in &clustering.clusters {
        for w in c.windows(2) {
            uf.union(by_unique[w[0]][0], by_unique[w[1]][0]);
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (ci, &doc_idx) in candidates.iter().enumerate() {
        let r = uf.find(ci);
        groups.entry(r).or_default().push(doc_idx);
    }
    let mut ordered: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > 1).collect();
    for g in &mut ordered {
        g.sort_by(|&a, &b| policy.keeper.cmp(&docs[a], &docs[b]));
    }
    ordered.sort_by(|a, b| policy.keeper.cmp(&docs[a[0]], &docs[b[0]]));
    let sig_of = |doc_idx: usize| {
        let ci = candidates.binary_search(&doc_idx).expect("candidate index");
        &sigs[representative[ci]]
    };
    let mut dropped = vec![false; docs.len()];
    let mut drops = Vec::new();
    for g in ordered {
        let keeper = g[0];
        for &d in &g[1..] {
            dropped[d] = true;
            drops.push(DedupDrop {
                dropped_id: docs[d].id.clone(),
                kept_id: docs[keeper].id.clone(),
                shared_bands: sig_of(d).shared_bands(sig_of(keeper)),
                exact: text_hashes[d] == text_hashes[keeper],
            });
        }
    }
    Ok((dropped, drops))
}

/// Independent within-snapshot passes, one per snapshot. Survivors keep
/// input order.
pub fn dedup_within_snapshots(
    docs: Vec<InterleavedDoc>,
    params: &MinHashParams,
    keeper: Keeper,
    cache: Option<&SignatureCache>,
) -> Result<DedupOutcome, DedupError> {
    let policy = DedupPolicy { scope: Scope::WithinSnapshot, keeper };
    let mut by_snap: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, d) in docs.iter().enumerate() {
        by_snap.entry(d.snapshot_id.as_str()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_snap.into_values().collect();
    let results: Vec<(Vec<usize>, Vec<bool>, Vec<DedupDrop>)> = groups
        .into_par_iter()
        .map(|idx| {
            let batch: Vec<InterleavedDoc> = idx.iter().map(|&i| docs[i].clone()).collect();
            let (flags, drops) = dedup_flags(&batch, params, &policy, cache)?;
            Ok((idx, flags, drops))
        })
        .collect::<Result<_, DedupError>>()?;
    let mut dropped = vec![false; docs.len()];
    let mut drops = Vec::new();
    for (idx, flags, d) in results {
        for (i, f) in idx.into_iter().zip(flags) {
            dropped[i] = f;
        }
        drops.extend(d);
    }
    Ok(DedupOutcome { survivors: retain_unflagged(docs, &dropped), drops })
}

/// Passes over consecutive snapshot pairs `(s1,s2), (s2,s3), ...` in
/// snapshot order. Every pair sees the full input; a document dropped by any
/// pair is dropped, and is logged once, by the first pair that drops it.
pub fn dedup_neighbor_pairs(
    docs: Vec<InterleavedDoc>,
    params: &MinHashParams,
    keeper: Keeper,
    cache: Option<&SignatureCache>,
) -> Result<DedupOutcome, DedupError> {
    let policy = DedupPolicy { scope: Scope::NeighborPairs, keeper };
    let snaps: Vec<&str> = docs.iter().map(|d| d.snapshot_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut dropped = vec![false; docs.len()];
    let mut drops = Vec::new();
    for pair in snaps.windows(2) {
        let idx: Vec<usize> = (0..docs.len()).filter(|&i| pair.contains(&docs[i].snapshot_id.as_str())).collect();
        let batch: Vec<InterleavedDoc> = idx.iter().map(|&i| docs[i].clone()).collect();
        let (flags, d) = dedup_flags(&batch, params, &policy, cache)?;
        let newly: BTreeSet<&str> =
            idx.iter().zip(&flags).filter(|(&i, &f)| f && !dropped[i]).map(|(&i, _)| docs[i].id.as_str()).collect();
        drops.extend(d.into_iter().filter(|r| newly.contains(r.dropped_id.as_str())));
        for (i, f) in idx.into_iter().zip(flags) {
            dropped[i] |= f;
        }
    }
    Ok(DedupOutcome { survivors: retain_unflagged(docs, &dropped), drops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::text_doc;
    use proptest::prelude::*;

    fn snap_doc(id: &str, snap: &str, text: &str) -> InterleavedDoc {
        let mut d = text_doc(id, text);
        d.snapshot_id = snap.to_string();
        d
    }

    const TEXT: &str = "the quick brown fox jumps over the lazy dog near the river bank today";

    fn ids(docs: &[InterleavedDoc]) -> Vec<&str> {
        docs.iter().map(|d| d.id.as_str()).collect()
    }

    #[test]
    fn keeper_picks_smallest_id() {
        let docs = ["c", "a", "b"].iter().map(|id| text_doc(id, TEXT)).collect();
        let out = dedup_pass(docs, &MinHashParams::default(), &DedupPolicy::within_snapshot(), None).unwrap();
        assert_eq!(ids(&out.survivors), ["a"]);
        assert_eq!(out.drops.len(), 2);
        assert!(out.drops.iter().all(|d| d.kept_id == "a" && d.exact && d.shared_bands.len() == 14));
    }

    #[test]
    fn neighbor_keeps_earlier_snapshot() {
        let docs = vec![snap_doc("x", "CC-MAIN-2023-14", TEXT), snap_doc("y", "CC-MAIN-2023-06", TEXT)];
        let out = dedup_pass(docs, &MinHashParams::default(), &DedupPolicy::neighbor_pairs(), None).unwrap();
        assert_eq!(ids(&out.survivors), ["y"]);
    }

    #[test]
    fn second_pass_drops_nothing() {
        let docs: Vec<_> = (0..6).map(|i| text_doc(&format!("d{i}"), if i % 2 == 0 { TEXT } else { "other words entirely here" })).collect();
        let p = MinHashParams::default();
        let once = dedup_pass(docs, &p, &DedupPolicy::within_snapshot(), None).unwrap();
        assert_eq!(once.survivors.len(), 2);
        let twice = dedup_pass(once.survivors.clone(), &p, &DedupPolicy::within_snapshot(), None).unwrap();
        assert!(twice.drops.is_empty());
        assert_eq!(twice.survivors, once.survivors);
    }

    #[test]
    fn scope_violations() {
        let p = MinHashParams::default();
        let mixed = vec![snap_doc("a", "CC-MAIN-2023-06", TEXT), snap_doc("b", "CC-MAIN-2023-14", TEXT)];
        assert!(matches!(dedup_pass(mixed, &p, &DedupPolicy::within_snapshot(), None), Err(DedupError::Scope(_))));
        let single = vec![snap_doc("a", "CC-MAIN-2023-06", TEXT)];
        assert!(matches!(dedup_pass(single, &p, &DedupPolicy::neighbor_pairs(), None), Err(DedupError::Scope(_))));
    }

    #[test]
    fn mixed_params_rejected() {
        let a = Permutations::new(MinHashParams::default()).unwrap().signature_of_text("a", TEXT).unwrap();
        let b = Permutations::new(MinHashParams { seed: 9, ..Default::default() })
            .unwrap()
            .signature_of_text("b", TEXT)
            .unwrap();
        assert!(matches!(cluster(&[a, b], &MinHashParams::default()), Err(DedupError::MixedParams)));
    }

    #[test]
    fn image_only_docs_pass_through() {
        let mut d1 = crate::doc::test_support::doc("i1", &[None], &[Some("https://x.org/a.png")]);
        d1.snapshot_id = "CC-MAIN-2023-06".into();
        let d2 = InterleavedDoc { id: "i2".into(), ..d1.clone() };
        let out = dedup_pass(vec![d1, d2], &MinHashParams::default(), &DedupPolicy::within_snapshot(), None).unwrap();
        assert_eq!(out.survivors.len(), 2);
    }

    #[test]
    fn neighbor_schedule_chains() {
        let docs = vec![
            snap_doc("a", "CC-MAIN-2023-06", TEXT),
            snap_doc("b", "CC-MAIN-2023-14", TEXT),
            snap_doc("c", "CC-MAIN-2023-23", TEXT),
            snap_doc("d", "CC-MAIN-2023-23", "unrelated words for the last snapshot only"),
        ];
        let out = dedup_neighbor_pairs(docs, &MinHashParams::default(), Keeper::default(), None).unwrap();
        assert_eq!(ids(&out.survivors), ["a", "d"]);
        assert_eq!(out.drops.len(), 2);
    }

    #[test]
    fn within_snapshots_groups_independently() {
        let docs = vec![
            snap_doc("b", "CC-MAIN-2023-06", TEXT),
            snap_doc("a", "CC-MAIN-2023-14", TEXT),
            snap_doc("c", "CC-MAIN-2023-06", TEXT),
        ];
        let out = dedup_within_snapshots(docs, &MinHashParams::default(), Keeper::default(), None).unwrap();
        assert_eq!(ids(&out.survivors), ["b", "a"]);
    }

    proptest! {
        #[test]
        fn conservation_and_order_independence(
            picks in proptest::collection::vec(0usize..4, 2..20),
            rot in 0usize..20,
        ) {
            let bases = [TEXT, "alpha beta gamma delta epsilon zeta eta theta", "one two three four five six", ""];
            let docs: Vec<_> = picks.iter().enumerate().map(|(i, &b)| text_doc(&format!("d{i:02}"), bases[b])).collect();
            let p = MinHashParams::default();
            let out = dedup_pass(docs.clone(), &p, &DedupPolicy::within_snapshot(), None).unwrap();
            prop_assert_eq!(out.survivors.len() + out.drops.len(), docs.len());
            let mut rotated = docs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let out2 = dedup_pass(rotated, &p, &DedupPolicy::within_snapshot(), None).unwrap();
            let a: BTreeSet<_> = out.survivors.iter().map(|d| d.id.clone()).collect();
            let b: BTreeSet<_> = out2.survivors.iter().map(|d| d.id.clone()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
