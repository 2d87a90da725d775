//! Golden fixtures: `<root>/<name>/{input.html, expected.json}`.
//!
//! `expected.json` holds `{"math": [...], "doc": {...}}` or
//! `{"math": [], "rejected": "<reason>"}`. Every fixture is extracted as a
//! record with id `<name>` fetched from [`FIXTURE_URL`].

use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use serde::Deserialize;

use super::{extract_document, Extracted};
use crate::ingest::CrawlRecord;

pub const FIXTURE_URL: &str = "https://ex.org/a/b.html";
pub const FIXTURE_SNAPSHOT: &str = "CC-MAIN-2023-06";

#[derive(Debug, Deserialize)]
pub struct Expected {
    #[serde(default)]
    pub math: Vec<String>,
    pub doc: Option<serde_json::Value>,
    pub rejected: Option<String>,
}

#[derive(Debug)]
pub struct GoldenFixture {
    pub name: String,
    pub dir: PathBuf,
    pub html: String,
    pub expected: Expected,
}

impl GoldenFixture {
    pub fn record(&self) -> CrawlRecord {
        CrawlRecord::new(
            self.name.clone(),
            FIXTURE_URL,
            FIXTURE_SNAPSHOT,
            Utc.with_ymd_and_hms(2023, 2, 1, 0, 0, 0).unwrap(),
            "text/html",
            self.html.clone(),
        )
        .expect("fixture record is valid")
    }

    /// Extracts the fixture and compares against the expectation. The doc is
    /// compared as canonical (key-sorted) JSON text.
    pub fn check(&self) -> Result<(), String> {
        let out = extract_document(&self.record()).map_err(|e| e.to_string())?;
        match (&out, &self.expected.doc, &self.expected.rejected) {
            (Extracted::Rejected(r), None, Some(want)) => {
                if r.to_string() != *want {
                    return Err(format!("{}: rejected as {r}, expected {want}", self.name));
                }
                Ok(())
            }
            (Extracted::Doc(doc), Some(want), None) => {
                let got = serde_json::to_value(doc).map_err(|e| e.to_string())?;
                let got_s = serde_json::to_string_pretty(&got).unwrap();
                let want_s = serde_json::to_string_pretty(want).unwrap();
                if got_s != want_s {
                    return Err(format!("{}: output differs\n--- got\n{got_s}\n--- expected\n{want_s}", self.name));
                }
                let text = doc.plain_text();
                for m in &self.expected.math {
                    if !text.contains(m.as_str()) {
                        return Err(format!("{}: math source `{m}` missing from extracted text", self.name));
                    }
                }
                doc.check_invariants().map_err(|e| e.to_string())
            }
            (got, _, _) => Err(format!("{}: unexpected outcome {got:?}", self.name)),
        }
    }
}

pub fn load_fixtures(root: &Path) -> std::io::Result<Vec<GoldenFixture>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|dir| {
            let name = dir.file_name().unwrap().to_string_lossy().into_owned();
            let html = std::fs::read_to_string(dir.join("input.html"))?;
            let raw = std::fs::read_to_string(dir.join("expected.json"))?;
            let expected: Expected = serde_json::from_str(&raw)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{name}: {e}")))?;
            Ok(GoldenFixture { name, dir, html, expected })
        })
        .collect()
}
