//! Exact URL deduplication within a calendar year, preferring the most
//! recent copy.

use std::collections::HashMap;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::doc::InterleavedDoc;
use crate::ingest::snapshot_year;

/// Grouping key: URL without fragment, plus the snapshot's calendar year.
pub fn url_key(doc: &InterleavedDoc) -> (String, i32) {
    let url = doc.url.split('#').next().unwrap_or("").to_string();
    let year = snapshot_year(&doc.snapshot_id).map(|y| y as i32).unwrap_or_else(|| doc.fetch_time.year());
    (url, year)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlDrop {
    pub dropped_id: String,
    pub kept_id: String,
    pub url: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrlDedupOutcome {
    pub survivors: Vec<InterleavedDoc>,
    pub drops: Vec<UrlDrop>,
}

/// True when `a` should be kept over `b`: later `(snapshot_id, fetch_time)`,
/// ties to the smaller id.
fn preferred(a: &InterleavedDoc, b: &InterleavedDoc) -> bool {
    (&a.snapshot_id, a.fetch_time)
        .cmp(&(&b.snapshot_id, b.fetch_time))
        .then_with(|| b.id.cmp(&a.id))
        .is_gt()
}

/// Keeps one document per [`url_key`]. Survivors keep input order.
pub fn url_dedup(docs: Vec<InterleavedDoc>) -> UrlDedupOutcome {
    let mut winner: HashMap<(String, i32), usize> = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        winner
            .entry(url_key(d))
            .and_modify(|w| {
                if preferred(d, &docs[*w]) {
                    *w = i;
                }
            })
            .or_insert(i);
    }
    let mut drops = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let key = url_key(d);
        let w = winner[&key];
        if w != i {
            drops.push(UrlDrop { dropped_id: d.id.clone(), kept_id: docs[w].id.clone(), url: key.0, year: key.1 });
        }
    }
    drops.sort_by(|a, b| a.dropped_id.cmp(&b.dropped_id));
    let survivors =
        docs.into_iter().enumerate().filter(|(i, d)| winner[&url_key(d)] == *i).map(|(_, d)| d).collect();
    UrlDedupOutcome { survivors, drops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_support::text_doc;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn at(id: &str, url: &str, snap: &str, day: u32) -> InterleavedDoc {
        let mut d = text_doc(id, "t");
        d.url = url.into();
        d.snapshot_id = snap.into();
        d.fetch_time = Utc.with_ymd_and_hms(2023, 1, day, 0, 0, 0).unwrap();
        d
    }

    fn ids(o: &UrlDedupOutcome) -> Vec<&str> {
        o.survivors.iter().map(|d| d.id.as_str()).collect()
    }

    #[test]
    fn keeps_more_recent_snapshot() {
        let o = url_dedup(vec![at("new", "https://a.org/x", "CC-MAIN-2023-14", 1), at("old", "https://a.org/x", "CC-MAIN-2023-06", 9)]);
        assert_eq!(ids(&o), ["new"]);
        assert_eq!(o.drops[0].kept_id, "new");
    }

    #[test]
    fn different_years_both_kept() {
        let o = url_dedup(vec![at("a", "https://a.org/x", "CC-MAIN-2022-49", 1), at("b", "https://a.org/x", "CC-MAIN-2023-06", 1)]);
        assert_eq!(ids(&o), ["a", "b"]);
    }

    #[test]
    fn fragment_ignored_and_ties() {
        let o = url_dedup(vec![
            at("z", "https://a.org/x#sec2", "CC-MAIN-2023-06", 1),
            at("y", "https://a.org/x", "CC-MAIN-2023-06", 1),
            at("w", "https://a.org/x", "CC-MAIN-2023-06", 2),
        ]);
        assert_eq!(ids(&o), ["w"]);
        let o = url_dedup(vec![at("z", "https://a.org/x#s", "CC-MAIN-2023-06", 1), at("y", "https://a.org/x", "CC-MAIN-2023-06", 1)]);
        assert_eq!(ids(&o), ["y"]);
    }

    proptest! {
        #[test]
        fn idempotent_and_order_free(spec in proptest::collection::vec((0usize..3, 0usize..4, 1u32..4), 1..15), rot in 0usize..15) {
            let snaps = ["CC-MAIN-2022-49", "CC-MAIN-2023-06", "CC-MAIN-2023-14", "CC-MAIN-2023-23"];
            let docs: Vec<_> = spec.iter().enumerate()
                .map(|(i, &(u, s, d))| at(&format!("d{i:02}"), &format!("https://a.org/{u}"), snaps[s], d))
                .collect();
            let once = url_dedup(docs.clone());
            prop_assert_eq!(once.survivors.len() + once.drops.len(), docs.len());
            let twice = url_dedup(once.survivors.clone());
            prop_assert!(twice.drops.is_empty());
            let mut r = docs.clone();
            let k = rot % r.len();
            r.rotate_left(k);
            let mut a: Vec<_> = once.survivors.iter().map(|d| d.id.clone()).collect();
            let mut b: Vec<_> = url_dedup(r).survivors.iter().map(|d| d.id.clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
