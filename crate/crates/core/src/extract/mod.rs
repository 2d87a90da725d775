//! Main-content extraction from HTML into an [`InterleavedDoc`], keeping
//! equations inline and images at their reading-order positions.
//!
//! Pruning is a fixed rule list: boilerplate elements (`nav`, `header`,
//! `footer`, `aside`, `form`, non-math `script`, ...) and any element whose
//! `class`/`id` carries a boilerplate token are removed with their subtree.
//! Remaining blocks shorter than [`MIN_BLOCK_CHARS`] are dropped unless they
//! contain math or sit directly next to an image (captions, labels).

pub mod golden;
mod math;

pub use math::{is_math_node, serialize_math};

use std::collections::BTreeMap;

use ego_tree::NodeRef;
use scraper::{ElementRef, Html, Node};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::doc::InterleavedDoc;
use crate::ingest::CrawlRecord;

pub const MIN_BLOCK_CHARS: usize = 10;

const PRUNED_ELEMENTS: [&str; 12] = [
    "script", "style", "nav", "header", "footer", "aside", "form", "noscript", "head", "title", "template", "iframe",
];

const BOILERPLATE_TOKENS: [&str; 6] = ["nav", "menu", "footer", "sidebar", "comment", "breadcrumb"];

// Rendered glyph copies of equations whose source is kept elsewhere.
const RENDERED_MATH_CLASSES: [&str; 4] = ["mathjax", "mathjax_preview", "mathjax_display", "katex-html"];

const BLOCK_ELEMENTS: [&str; 38] = [
    "address", "article", "blockquote", "body", "caption", "center", "dd", "details", "dialog", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "h1", "h2", "h3", "h4", "h5", "h6", "hr", "html", "li", "main", "ol", "p",
    "pre", "section", "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    EmptyAfterPruning,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::EmptyAfterPruning => f.write_str("empty_after_pruning"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("record {id}: empty payload")]
    EmptyPayload { id: String },
    #[error("record {id}: base url `{url}` is unusable: {reason}")]
    BadBase { id: String, url: String, reason: String },
}

/// Result of extracting one record: a document or a (non-error) rejection.
#[derive(Debug, Clone, PartialEq)]
pub enum Extracted {
    Doc(InterleavedDoc),
    Rejected(Rejection),
}

/// Resolves an image `src` against the page URL. `data:`/`javascript:` URIs
/// and non-http(s) results are rejected.
pub fn resolve_image_url(src: &str, base: &Url) -> Option<String> {
    let src = src.trim();
    if src.is_empty() {
        return None;
    }
    let lower = src.to_ascii_lowercase();
    if lower.starts_with("data:") || lower.starts_with("javascript:") {
        return None;
    }
    let resolved = base.join(src).ok()?;
    matches!(resolved.scheme(), "http" | "https").then(|| resolved.to_string())
}

#[derive(Debug, Default)]
struct Block {
    text: String,
    has_math: bool,
    pending_space: bool,
}

impl Block {
    fn push_text(&mut self, s: &str, preformatted: bool) {
        if preformatted {
            self.flush_space();
            self.text.push_str(s);
            return;
        }
        for c in s.chars() {
            if c.is_whitespace() {
                self.pending_space = true;
            } else {
                self.flush_space();
                self.text.push(c);
            }
        }
    }

    fn flush_space(&mut self) {
        if self.pending_space && !self.text.is_empty() && !self.text.ends_with(char::is_whitespace) {
            self.text.push(' ');
        }
        self.pending_space = false;
    }

    fn push_verbatim(&mut self, s: &str) {
        self.flush_space();
        self.text.push_str(s);
    }

    fn line_break(&mut self) {
        self.pending_space = false;
        if !self.text.is_empty() {
            self.text.push('\n');
        }
    }
}

enum Item {
    Text { text: String, has_math: bool },
    Image(String),
}

struct Walker<'a> {
    base: &'a Url,
    items: Vec<Item>,
    current: Block,
    pre_depth: usize,
    // Set while inside the outermost math-class span; true once it emitted math.
    math_span: Option<bool>,
}

fn is_boilerplate(el: &ElementRef<'_>) -> bool {
    let v = el.value();
    let name = v.name();
    if PRUNED_ELEMENTS.contains(&name) && !(name == "script" && is_math_node(el)) {
        return true;
    }
    if let Some(class) = v.attr("class") {
        if class
            .split_whitespace()
            .any(|t| RENDERED_MATH_CLASSES.contains(&t.to_ascii_lowercase().as_str()))
        {
            return true;
        }
    }
    ["class", "id"].iter().filter_map(|a| v.attr(a)).any(|attr| {
        math::class_tokens(attr).any(|t| BOILERPLATE_TOKENS.contains(&t.as_str()))
    })
}

impl<'a> Walker<'a> {
    fn flush(&mut self) {
        let block = std::mem::take(&mut self.current);
        let text = block.text.trim();
        if !text.is_empty() {
            self.items.push(Item::Text { text: text.to_string(), has_math: block.has_math });
        }
    }

    fn walk(&mut self, node: NodeRef<'_, Node>) {
        match node.value() {
            Node::Text(t) => self.current.push_text(t, self.pre_depth > 0),
            Node::Element(_) => {
                let el = ElementRef::wrap(node).expect("element node");
                self.element(el);
            }
            Node::Document | Node::Fragment => {
                for child in node.children() {
                    self.walk(child);
                }
            }
            _ => {}
        }
    }

    fn element(&mut self, el: ElementRef<'_>) {
        if is_boilerplate(&el) {
            return;
        }
        if is_math_node(&el) {
            if self.math_span == Some(true) {
                return;
            }
            if let Some(m) = serialize_math(&el) {
                self.current.push_verbatim(&m);
                self.current.has_math = true;
                if let Some(emitted) = self.math_span.as_mut() {
                    *emitted = true;
                }
            }
            return;
        }
        let name = el.value().name();
        if name == "span" && self.math_span.is_none() && math::has_math_class(&el) {
            self.math_span = Some(false);
            for child in el.children() {
                self.walk(child);
            }
            self.math_span = None;
            return;
        }
        match name {
            "img" => {
                let src = el.value().attr("src").or_else(|| el.value().attr("data-src"));
                if let Some(url) = src.and_then(|s| resolve_image_url(s, self.base)) {
                    self.flush();
                    self.items.push(Item::Image(url));
                }
            }
            "br" => self.current.line_break(),
            _ => {
                let block = BLOCK_ELEMENTS.contains(&name);
                let pre = name == "pre";
                if block {
                    self.flush();
                }
                if pre {
                    self.pre_depth += 1;
                }
                for child in el.children() {
                    self.walk(child);
                }
                if pre {
                    self.pre_depth -= 1;
                }
                if block {
                    self.flush();
                }
            }
        }
    }
}

/// Parses `html` and returns the retained content as parallel text/image
/// lists. Empty lists mean nothing survived pruning.
pub fn extract_slots(html: &str, base: &Url) -> (Vec<Option<String>>, Vec<Option<String>>) {
    let parsed = Html::parse_document(html);
    let mut walker = Walker { base, items: Vec::new(), current: Block::default(), pre_depth: 0, math_span: None };
    walker.walk(parsed.tree.root());
    walker.flush();
    let items = walker.items;

    let is_image = |i: Option<&Item>| matches!(i, Some(Item::Image(_)));
    let keep: Vec<bool> = (0..items.len())
        .map(|i| match &items[i] {
            Item::Image(_) => true,
            Item::Text { text, has_math } => {
                *has_math
                    || text.chars().count() >= MIN_BLOCK_CHARS
                    || is_image(i.checked_sub(1).and_then(|j| items.get(j)))
                    || is_image(items.get(i + 1))
            }
        })
        .collect();

    let mut texts = Vec::new();
    let mut images = Vec::new();
    let mut pending: Option<String> = None;
    for (item, keep) in items.into_iter().zip(keep) {
        if !keep {
            continue;
        }
        match item {
            Item::Text { text, .. } => match &mut pending {
                Some(p) => {
                    p.push_str("\n\n");
                    p.push_str(&text);
                }
                None => pending = Some(text),
            },
            Item::Image(url) => {
                if let Some(t) = pending.take() {
                    texts.push(Some(t));
                    images.push(None);
                }
                texts.push(None);
                images.push(Some(url));
            }
        }
    }
    if let Some(t) = pending {
        texts.push(Some(t));
        images.push(None);
    }
    (texts, images)
}

/// Converts one crawl record into an interleaved document.
pub fn extract_document(record: &CrawlRecord) -> Result<Extracted, ExtractError> {
    if record.html.trim().is_empty() {
        return Err(ExtractError::EmptyPayload { id: record.id.clone() });
    }
    let base = Url::parse(&record.url).map_err(|e| ExtractError::BadBase {
        id: record.id.clone(),
        url: record.url.clone(),
        reason: e.to_string(),
    })?;
    let (texts, images) = extract_slots(&record.html, &base);
    if texts.is_empty() {
        return Ok(Extracted::Rejected(Rejection::EmptyAfterPruning));
    }
    Ok(Extracted::Doc(InterleavedDoc {
        id: record.id.clone(),
        url: record.url.clone(),
        snapshot_id: record.snapshot_id.clone(),
        fetch_time: record.fetch_time,
        texts,
        images,
        language: None,
        scores: BTreeMap::new(),
        meta: BTreeMap::new(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn record(url: &str, html: &str) -> CrawlRecord {
        CrawlRecord::new(
            "r1",
            url,
            "CC-MAIN-2023-06",
            chrono::Utc.with_ymd_and_hms(2023, 2, 1, 0, 0, 0).unwrap(),
            "text/html",
            html,
        )
        .unwrap()
    }

    fn slots(url: &str, html: &str) -> (Vec<Option<String>>, Vec<Option<String>>) {
        match extract_document(&record(url, html)).unwrap() {
            Extracted::Doc(d) => (d.texts, d.images),
            Extracted::Rejected(r) => panic!("rejected: {r}"),
        }
    }

    fn s(x: &str) -> Option<String> {
        Some(x.to_string())
    }

    #[test]
    fn inline_tex_script() {
        let (t, i) = slots(
            "https://ex.org/a/b.html",
            r#"<html><body><p>Let <script type="math/tex">x^2+1</script> hold.</p></body></html>"#,
        );
        assert_eq!(t, vec![s("Let $x^2+1$ hold.")]);
        assert_eq!(i, vec![None]);
    }

    #[test]
    fn image_interleaving_with_relative_src() {
        let (t, i) = slots(
            "https://ex.org/a/b.html",
            r#"<body><p>See:</p><img src="/fig/plot.png"><p>above.</p></body>"#,
        );
        assert_eq!(t, vec![s("See:"), None, s("above.")]);
        assert_eq!(i, vec![None, s("https://ex.org/fig/plot.png"), None]);
    }

    #[test]
    fn boilerplate_only_is_rejected() {
        let r = extract_document(&record(
            "https://ex.org/",
            "<body><nav>Home | About</nav><footer>©</footer></body>",
        ))
        .unwrap();
        assert_eq!(r, Extracted::Rejected(Rejection::EmptyAfterPruning));
    }

    #[test]
    fn class_token_pruning() {
        let (t, _) = slots(
            "https://ex.org/",
            r#"<body><div class="site-sidebar">Popular posts this week</div><div id="comment-list">Nice article, thanks!</div><p>The actual content paragraph.</p></body>"#,
        );
        assert_eq!(t, vec![s("The actual content paragraph.")]);
    }

    #[test]
    fn short_blocks_dropped_unless_math() {
        let (t, _) = slots(
            "https://ex.org/",
            r#"<body><p>Login</p><p><script type="math/tex">a</script></p><p>A sufficiently long paragraph.</p></body>"#,
        );
        assert_eq!(t, vec![s("$a$\n\nA sufficiently long paragraph.")]);
    }

    #[test]
    fn math_image_is_text_not_image() {
        let (t, i) = slots(
            "https://ex.org/",
            r#"<body><p>Energy: <img class="latex" alt="E=mc^2" src="/e.png"> as known.</p></body>"#,
        );
        assert_eq!(t, vec![s("Energy: $E=mc^2$ as known.")]);
        assert_eq!(i, vec![None]);
    }

    #[test]
    fn data_uri_images_skipped() {
        let (t, i) = slots(
            "https://ex.org/",
            r#"<body><p>Some text that is long enough.</p><img src="data:image/png;base64,AAAA"></body>"#,
        );
        assert_eq!(t.len(), 1);
        assert_eq!(i, vec![None]);
    }

    #[test]
    fn wikipedia_math_rendered_once() {
        let html = r#"<body><p>The value <span class="mwe-math-element"><span class="mwe-math-mathml-inline" style="display: none;"><math><semantics><mi>x</mi><annotation encoding="application/x-tex">{\displaystyle x}</annotation></semantics></math></span><img src="/media/x.svg" class="mwe-math-fallback-image-inline" alt="{\displaystyle x}"></span> is positive.</p></body>"#;
        let (t, i) = slots("https://en.wikipedia.org/wiki/X", html);
        assert_eq!(t, vec![s(r"The value ${\displaystyle x}$ is positive.")]);
        assert_eq!(i, vec![None]);
    }

    #[test]
    fn mathjax_glyphs_dropped() {
        let html = r#"<body><p>Consider <span class="MathJax_Preview"></span><span class="MathJax" id="MathJax-Element-1-Frame"><nobr>x2</nobr></span><script type="math/tex" id="MathJax-Element-1">x^2</script> now.</p></body>"#;
        let (t, _) = slots("https://ex.org/", html);
        assert_eq!(t, vec![s("Consider $x^2$ now.")]);
    }

    #[test]
    fn empty_payload_is_error() {
        assert!(matches!(extract_document(&record("https://ex.org/", "   ")), Err(ExtractError::EmptyPayload { .. })));
    }

    #[test]
    fn resolve_examples() {
        let base = Url::parse("https://ex.org/x/y/z.html").unwrap();
        assert_eq!(resolve_image_url("../i/a.png", &base).unwrap(), "https://ex.org/x/i/a.png");
        assert_eq!(resolve_image_url("https://cdn.ex.org/e.gif", &base).unwrap(), "https://cdn.ex.org/e.gif");
        assert_eq!(resolve_image_url("data:image/png;base64,AAAA", &base), None);
        assert_eq!(resolve_image_url("javascript:void(0)", &base), None);
        assert_eq!(resolve_image_url("", &base), None);
    }

    #[test]
    fn pre_keeps_newlines() {
        let (t, _) = slots("https://ex.org/", "<body><pre>line one\n  line two</pre></body>");
        assert_eq!(t, vec![s("line one\n  line two")]);
    }

    proptest! {
        #[test]
        fn resolution_is_idempotent(path in "[a-z]{1,8}(/[a-z0-9]{1,8}){0,3}\\.(png|gif)", up in 0usize..3) {
            let base = Url::parse("https://ex.org/a/b/c/page.html").unwrap();
            let src = format!("{}{}", "../".repeat(up), path);
            let once = resolve_image_url(&src, &base).unwrap();
            let twice = resolve_image_url(&once, &base).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn output_satisfies_doc_invariants(parts in proptest::collection::vec(0u8..5, 1..20)) {
            let mut html = String::from("<body>");
            for (k, p) in parts.iter().enumerate() {
                match p {
                    0 => html.push_str(&format!("<p>Paragraph number {k} with words.</p>")),
                    1 => html.push_str(&format!("<img src=\"/i{k}.png\">")),
                    2 => html.push_str("<nav>menu</nav>"),
                    3 => html.push_str(&format!("<span>x<script type=\"math/tex\">{k}</script></span>")),
                    _ => html.push_str("<p>ab</p>"),
                }
            }
            let r = extract_document(&record("https://ex.org/p.html", &html)).unwrap();
            if let Extracted::Doc(d) = r {
                prop_assert!(d.check_invariants().is_ok());
                let positions: Vec<_> = d.images.iter().enumerate().filter(|(_, i)| i.is_some()).map(|(k, _)| k).collect();
                prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
