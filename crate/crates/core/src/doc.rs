//! The interleaved image-text document that flows between every stage.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// OBELICS-style document: `texts` and `images` are parallel lists where each
/// index holds exactly one non-null entry, in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedDoc {
    pub id: String,
    pub url: String,
    #[serde(rename = "snapshot")]
    pub snapshot_id: String,
    #[serde(rename = "timestamp")]
    pub fetch_time: DateTime<Utc>,
    pub texts: Vec<Option<String>>,
    pub images: Vec<Option<String>>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocInvariantError {
    #[error("doc {id}: texts has {texts} entries but images has {images}")]
    LengthMismatch { id: String, texts: usize, images: usize },
    #[error("doc {id}: slot {index} has {non_null} non-null entries, expected exactly one")]
    Slot { id: String, index: usize, non_null: usize },
    #[error("doc {id}: image slot {index} is not an absolute URL: {url}")]
    RelativeImage { id: String, index: usize, url: String },
    #[error("doc {id}: no content")]
    Empty { id: String },
}

impl InterleavedDoc {
    /// Number of slots (equal to both list lengths when the doc is valid).
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn image_urls(&self) -> impl Iterator<Item = &str> {
        self.images.iter().filter_map(|i| i.as_deref())
    }

    pub fn image_count(&self) -> usize {
        self.images.iter().filter(|i| i.is_some()).count()
    }

    /// Non-null texts joined by a blank line; image slots contribute nothing.
    pub fn plain_text(&self) -> String {
        let mut out = String::new();
        for t in self.texts.iter().flatten() {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(t);
        }
        out
    }

    /// Delete slot `index` from both lists.
    pub fn remove_slot(&mut self, index: usize) {
        self.texts.remove(index);
        self.images.remove(index);
    }

    pub fn check_invariants(&self) -> Result<(), DocInvariantError> {
        if self.texts.len() != self.images.len() {
            return Err(DocInvariantError::LengthMismatch {
                id: self.id.clone(),
                texts: self.texts.len(),
                images: self.images.len(),
            });
        }
        if self.texts.is_empty() {
            return Err(DocInvariantError::Empty { id: self.id.clone() });
        }
        for (index, (t, i)) in self.texts.iter().zip(&self.images).enumerate() {
            let non_null = t.is_some() as usize + i.is_some() as usize;
            if non_null != 1 {
                return Err(DocInvariantError::Slot { id: self.id.clone(), index, non_null });
            }
            if let Some(u) = i {
                let absolute = url::Url::parse(u).map(|p| !p.cannot_be_a_base()).unwrap_or(false);
                if !absolute {
                    return Err(DocInvariantError::RelativeImage {
                        id: self.id.clone(),
                        index,
                        url: u.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Free function form of [`InterleavedDoc::plain_text`].
pub fn plain_text(doc: &InterleavedDoc) -> String {
    doc.plain_text()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use chrono::TimeZone;

    pub fn doc(id: &str, texts: &[Option<&str>], images: &[Option<&str>]) -> InterleavedDoc {
        InterleavedDoc {
            id: id.to_string(),
            url: format!("https://example.org/{id}"),
            snapshot_id: "CC-MAIN-2023-06".to_string(),
            fetch_time: Utc.with_ymd_and_hms(2023, 2, 1, 0, 0, 0).unwrap(),
            texts: texts.iter().map(|t| t.map(str::to_string)).collect(),
            images: images.iter().map(|t| t.map(str::to_string)).collect(),
            language: None,
            scores: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn text_doc(id: &str, text: &str) -> InterleavedDoc {
        doc(id, &[Some(text)], &[None])
    }
}
