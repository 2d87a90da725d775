//! Read-only subset of WARC/1.0 and WARC/1.1: `response` records carrying
//! HTTP responses, optionally gzip-compressed per record.

use std::io::{BufRead, BufReader, Read};

use chrono::{DateTime, Utc};
use flate2::read::MultiGzDecoder;

use super::{is_html_content_type, CrawlRecord, IngestError, ReaderStats};

/// Streaming WARC reader. Yields one item per HTML response record or per
/// record-level error; stops after a terminal error.
pub struct WarcReader {
    inner: Box<dyn BufRead>,
    snapshot_id: String,
    offset: u64,
    pending_line: Option<(u64, Vec<u8>)>,
    stats: ReaderStats,
    done: bool,
}

/// Opens a WARC stream. Gzip input (a single member or one member per record)
/// is detected from the magic bytes.
pub fn read_warc<R: Read + 'static>(stream: R, snapshot_id: &str) -> Result<WarcReader, IngestError> {
    let mut buffered = BufReader::new(stream);
    let head = buffered.fill_buf().map_err(|source| IngestError::Io { offset: 0, source })?;
    let inner: Box<dyn BufRead> = if head.starts_with(&[0x1f, 0x8b]) {
        Box::new(BufReader::new(MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    Ok(WarcReader {
        inner,
        snapshot_id: snapshot_id.to_string(),
        offset: 0,
        pending_line: None,
        stats: ReaderStats::default(),
        done: false,
    })
}

struct Header {
    fields: Vec<(String, String)>,
}

impl Header {
    fn get(&self, name: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

fn trim_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn is_version_line(line: &[u8]) -> bool {
    let l = trim_eol(line);
    l == b"WARC/1.0" || l == b"WARC/1.1"
}

impl WarcReader {
    pub fn stats(&self) -> &ReaderStats {
        &self.stats
    }

    /// Next raw line with its starting offset; `None` at EOF.
    fn read_line(&mut self) -> Result<Option<(u64, Vec<u8>)>, IngestError> {
        if let Some(p) = self.pending_line.take() {
            return Ok(Some(p));
        }
        let start = self.offset;
        let mut buf = Vec::new();
        let n = self
            .inner
            .read_until(b'\n', &mut buf)
            .map_err(|source| IngestError::Io { offset: start, source })?;
        if n == 0 {
            return Ok(None);
        }
        self.offset += n as u64;
        Ok(Some((start, buf)))
    }

    /// Skips forward to the next version line, leaving it pending.
    fn resync(&mut self) -> Result<(), IngestError> {
        while let Some((off, line)) = self.read_line()? {
            if is_version_line(&line) {
                self.pending_line = Some((off, line));
                break;
            }
        }
        Ok(())
    }

    fn fail(&mut self, err: IngestError) -> Option<Result<CrawlRecord, IngestError>> {
        self.stats.errors += 1;
        if err.is_terminal() {
            self.done = true;
        }
        Some(Err(err))
    }

    fn next_item(&mut self) -> Option<Result<CrawlRecord, IngestError>> {
        loop {
            // Blank separator lines between records.
            let (start, line) = loop {
                match self.read_line() {
                    Ok(None) => return None,
                    Ok(Some((_, l))) if trim_eol(&l).is_empty() => continue,
                    Ok(Some(x)) => break x,
                    Err(e) => {
                        self.stats.records_in += 1;
                        return self.fail(e);
                    }
                }
            };
            self.stats.records_in += 1;

            if !is_version_line(&line) {
                let shown = String::from_utf8_lossy(trim_eol(&line)).chars().take(40).collect::<String>();
                if let Err(e) = self.resync() {
                    return self.fail(e);
                }
                return self.fail(IngestError::MalformedRecord {
                    offset: start,
                    reason: format!("expected WARC version line, found `{shown}`"),
                });
            }

            let mut fields = Vec::new();
            let mut bad_header = None;
            loop {
                match self.read_line() {
                    Ok(None) => {
                        return self.fail(IngestError::Truncated { offset: start, expected: 0, got: 0 });
                    }
                    Ok(Some((_, l))) => {
                        let l = trim_eol(&l);
                        if l.is_empty() {
                            break;
                        }
                        let text = String::from_utf8_lossy(l);
                        match text.split_once(':') {
                            Some((k, v)) => fields.push((k.trim().to_string(), v.trim().to_string())),
                            None => bad_header = Some(format!("header line without colon: `{text}`")),
                        }
                    }
                    Err(e) => return self.fail(e),
                }
            }
            let header = Header { fields };
            if let Some(reason) = bad_header {
                if let Err(e) = self.resync() {
                    return self.fail(e);
                }
                return self.fail(IngestError::MalformedRecord { offset: start, reason });
            }
            let length = match header.get("Content-Length").map(|v| v.parse::<u64>()) {
                Some(Ok(n)) => n,
                Some(Err(_)) | None => {
                    if let Err(e) = self.resync() {
                        return self.fail(e);
                    }
                    return self.fail(IngestError::MalformedRecord {
                        offset: start,
                        reason: "missing or non-numeric Content-Length".into(),
                    });
                }
            };

            let mut block = Vec::with_capacity(length.min(1 << 24) as usize);
            let got = match (&mut self.inner).take(length).read_to_end(&mut block) {
                Ok(n) => n as u64,
                Err(source) => return self.fail(IngestError::Io { offset: self.offset, source }),
            };
            self.offset += got;
            if got < length {
                return self.fail(IngestError::Truncated { offset: start, expected: length, got });
            }

            let warc_type = header.get("WARC-Type").unwrap_or("");
            if !warc_type.eq_ignore_ascii_case("response") {
                self.stats.skipped_non_response += 1;
                continue;
            }

            let (content_type, body) = match split_http(&block) {
                Some(x) => x,
                None => {
                    return self.fail(IngestError::InvalidWarcRecord {
                        offset: start,
                        reason: "response block is not an HTTP response".into(),
                    })
                }
            };
            if !is_html_content_type(&content_type) {
                self.stats.skipped_non_html += 1;
                continue;
            }

            return match self.build_record(&header, content_type, body) {
                Ok(r) => {
                    self.stats.yielded += 1;
                    Some(Ok(r))
                }
                Err(reason) => self.fail(IngestError::InvalidWarcRecord { offset: start, reason }),
            };
        }
    }

    fn build_record(&self, header: &Header, content_type: String, body: &[u8]) -> Result<CrawlRecord, String> {
        let id = header
            .get("WARC-Record-ID")
            .ok_or("missing WARC-Record-ID")?
            .trim_start_matches('<')
            .trim_end_matches('>')
            .to_string();
        let url = header.get("WARC-Target-URI").ok_or("missing WARC-Target-URI")?;
        let date = header.get("WARC-Date").ok_or("missing WARC-Date")?;
        let fetch_time = DateTime::parse_from_rfc3339(date)
            .map_err(|e| format!("bad WARC-Date `{date}`: {e}"))?
            .with_timezone(&Utc);
        let html = String::from_utf8_lossy(body).into_owned();
        CrawlRecord::new(id, url, self.snapshot_id.clone(), fetch_time, content_type, html)
    }
}

/// Splits an HTTP response into (Content-Type, body).
fn split_http(block: &[u8]) -> Option<(String, &[u8])> {
    if !block.starts_with(b"HTTP/") {
        return None;
    }
    let (head_len, sep_len) = find_header_end(block)?;
    let head = String::from_utf8_lossy(&block[..head_len]);
    let content_type = head
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("content-type"))
        .map(|(_, v)| v.trim().to_string())
        .unwrap_or_default();
    Some((content_type, &block[head_len + sep_len..]))
}

fn find_header_end(block: &[u8]) -> Option<(usize, usize)> {
    if let Some(p) = block.windows(4).position(|w| w == b"\r\n\r\n") {
        return Some((p, 4));
    }
    block.windows(2).position(|w| w == b"\n\n").map(|p| (p, 2))
}

impl Iterator for WarcReader {
    type Item = Result<CrawlRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.next_item();
        if item.is_none() {
            self.done = true;
        }
        item
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::{Cursor, Write};

    pub fn warc_record(warc_type: &str, id: &str, url: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        write!(
            out,
            "WARC/1.0\r\nWARC-Type: {warc_type}\r\nWARC-Record-ID: <urn:uuid:{id}>\r\nWARC-Target-URI: {url}\r\nWARC-Date: 2023-02-01T10:00:00Z\r\nContent-Length: {}\r\n\r\n",
            payload.len()
        )
        .unwrap();
        out.extend_from_slice(payload);
        out.extend_from_slice(b"\r\n\r\n");
        out
    }

    pub fn http_payload(content_type: &str, body: &[u8]) -> Vec<u8> {
        let mut p = format!("HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\n\r\n").into_bytes();
        p.extend_from_slice(body);
        p
    }

    fn html_response(id: &str) -> Vec<u8> {
        warc_record(
            "response",
            id,
            &format!("https://ex.org/{id}"),
            &http_payload("text/html; charset=utf-8", b"<p>hello world</p>"),
        )
    }

    fn collect(bytes: Vec<u8>) -> (Vec<Result<CrawlRecord, IngestError>>, ReaderStats) {
        let mut r = read_warc(Cursor::new(bytes), "CC-MAIN-2023-06").unwrap();
        let items: Vec<_> = r.by_ref().collect();
        (items, r.stats().clone())
    }

    #[test]
    fn response_and_request_records() {
        let mut s = html_response("a");
        s.extend(warc_record("request", "q", "https://ex.org/a", b"GET / HTTP/1.1\r\n\r\n"));
        s.extend(html_response("b"));
        let (items, stats) = collect(s);
        let ids: Vec<_> = items.iter().map(|r| r.as_ref().unwrap().id.clone()).collect();
        assert_eq!(ids, ["urn:uuid:a", "urn:uuid:b"]);
        assert_eq!(stats.skipped(), 1);
        assert_eq!(stats.skipped_non_response, 1);
        assert!(stats.is_conserved());
        let r = items[0].as_ref().unwrap();
        assert_eq!(r.html, "<p>hello world</p>");
        assert_eq!(r.snapshot_id, "CC-MAIN-2023-06");
        assert_eq!(r.fetch_time.to_rfc3339(), "2023-02-01T10:00:00+00:00");
    }

    #[test]
    fn non_html_skipped() {
        let s = warc_record("response", "i", "https://ex.org/i.png", &http_payload("image/png", b"\x89PNG"));
        let (items, stats) = collect(s);
        assert!(items.is_empty());
        assert_eq!(stats.skipped_non_html, 1);
        assert!(stats.is_conserved());
    }

    #[test]
    fn truncated_final_record_is_terminal() {
        let mut s = html_response("a");
        let full = html_response("b");
        let cut = full.len() - 12;
        s.extend_from_slice(&full[..cut]);
        let first_len = html_response("a").len() as u64;
        let (items, stats) = collect(s);
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        match &items[1] {
            Err(e @ IngestError::Truncated { offset, .. }) => {
                assert!(e.is_terminal());
                assert_eq!(*offset, first_len);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(stats.is_conserved());
    }

    #[test]
    fn malformed_header_recovers() {
        let mut s = b"garbage line\r\nmore garbage\r\n".to_vec();
        s.extend(html_response("a"));
        let (items, stats) = collect(s);
        assert_eq!(items.len(), 2);
        assert!(matches!(items[0], Err(IngestError::MalformedRecord { offset: 0, .. })));
        assert_eq!(items[1].as_ref().unwrap().id, "urn:uuid:a");
        assert!(stats.is_conserved());
    }

    #[test]
    fn missing_content_length_recovers() {
        let mut s = b"WARC/1.0\r\nWARC-Type: response\r\n\r\nabc\r\n\r\n".to_vec();
        s.extend(html_response("a"));
        let (items, stats) = collect(s);
        assert!(matches!(items[0], Err(IngestError::MalformedRecord { .. })));
        assert!(items[1].is_ok());
        assert!(stats.is_conserved());
    }

    #[test]
    fn gzip_members_per_record() {
        let mut s = Vec::new();
        for id in ["a", "b"] {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&html_response(id)).unwrap();
            s.extend(enc.finish().unwrap());
        }
        let (items, stats) = collect(s);
        assert_eq!(items.len(), 2);
        assert!(items.iter().all(|i| i.is_ok()));
        assert_eq!(stats.yielded, 2);
    }

    #[test]
    fn invalid_utf8_is_lossy() {
        let s = warc_record("response", "u", "https://ex.org/u", &http_payload("text/html", b"<p>caf\xe9</p>"));
        let (items, _) = collect(s);
        assert_eq!(items[0].as_ref().unwrap().html, "<p>caf\u{FFFD}</p>");
    }

    #[test]
    fn bad_target_uri_is_record_error() {
        let mut s = warc_record("response", "x", "not a url", &http_payload("text/html", b"<p>x</p>"));
        s.extend(html_response("a"));
        let (items, stats) = collect(s);
        assert!(matches!(items[0], Err(IngestError::InvalidWarcRecord { .. })));
        assert!(items[1].is_ok());
        assert!(stats.is_conserved());
    }
}
