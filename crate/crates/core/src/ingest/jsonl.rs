use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde_json::Value;

use super::{is_html_content_type, CrawlRecord, IngestError, ReaderStats};

/// Line-oriented reader for `{"id","url","snapshot","timestamp","html"}`
/// objects. `snapshot` may be omitted when a default is supplied.
pub struct JsonlReader<R> {
    inner: R,
    default_snapshot: Option<String>,
    line_no: u64,
    stats: ReaderStats,
    done: bool,
}

pub fn read_jsonl<R: BufRead>(stream: R, default_snapshot: Option<&str>) -> JsonlReader<R> {
    JsonlReader {
        inner: stream,
        default_snapshot: default_snapshot.map(str::to_string),
        line_no: 0,
        stats: ReaderStats::default(),
        done: false,
    }
}

impl<R: BufRead> JsonlReader<R> {
    pub fn stats(&self) -> &ReaderStats {
        &self.stats
    }

    fn parse_line(&self, line: &str) -> Result<Option<CrawlRecord>, IngestError> {
        let n = self.line_no;
        let v: Value = serde_json::from_str(line).map_err(|e| IngestError::InvalidJson {
            line: n,
            reason: e.to_string(),
        })?;
        let obj = v.as_object().ok_or(IngestError::InvalidJson {
            line: n,
            reason: "not a JSON object".into(),
        })?;
        let str_field = |key: &'static str| -> Result<Option<&str>, IngestError> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.as_str())),
                Some(_) => Err(IngestError::InvalidLine { line: n, reason: format!("`{key}` is not a string") }),
            }
        };
        let required = |key: &'static str| -> Result<&str, IngestError> {
            str_field(key)?.ok_or(IngestError::MissingKey { line: n, key })
        };

        let id = required("id")?;
        let url = required("url")?;
        let snapshot = match str_field("snapshot")? {
            Some(s) => s.to_string(),
            None => self
                .default_snapshot
                .clone()
                .ok_or(IngestError::MissingKey { line: n, key: "snapshot" })?,
        };
        let ts = required("timestamp")?;
        let html = required("html")?;
        let content_type = str_field("content_type")?.unwrap_or("text/html");
        if !is_html_content_type(content_type) {
            return Ok(None);
        }
        let fetch_time = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| IngestError::InvalidLine { line: n, reason: format!("bad timestamp `{ts}`: {e}") })?
            .with_timezone(&Utc);
        CrawlRecord::new(id, url, snapshot, fetch_time, content_type, html)
            .map(Some)
            .map_err(|reason| IngestError::InvalidLine { line: n, reason })
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<CrawlRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let mut buf = Vec::new();
            match self.inner.read_until(b'\n', &mut buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(source) => {
                    self.done = true;
                    self.stats.records_in += 1;
                    self.stats.errors += 1;
                    return Some(Err(IngestError::Io { offset: self.line_no, source }));
                }
            }
            self.line_no += 1;
            let line = String::from_utf8_lossy(&buf);
            if line.trim().is_empty() {
                continue;
            }
            self.stats.records_in += 1;
            match self.parse_line(line.trim_end()) {
                Ok(Some(r)) => {
                    self.stats.yielded += 1;
                    return Some(Ok(r));
                }
                Ok(None) => self.stats.skipped_non_html += 1,
                Err(e) => {
                    self.stats.errors += 1;
                    log::warn!("{e}");
                    return Some(Err(e));
                }
            }
        }
        None
    }
}
