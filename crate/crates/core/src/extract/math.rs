//! Recognition and serialization of equation markup.

use scraper::ElementRef;

const MATH_CLASS_TOKENS: [&str; 4] = ["latex", "math", "mwe-math", "texhtml"];

/// Whitespace tokens of a class attribute plus their `-`/`_` separated pieces.
pub(crate) fn class_tokens(attr: &str) -> impl Iterator<Item = String> + '_ {
    attr.split_whitespace().flat_map(|tok| {
        let whole = std::iter::once(tok.to_ascii_lowercase());
        let pieces = tok
            .split(['-', '_'])
            .filter(|p| !p.is_empty() && p.len() != tok.len())
            .map(str::to_ascii_lowercase);
        whole.chain(pieces)
    })
}

pub(crate) fn has_math_class(el: &ElementRef<'_>) -> bool {
    el.value()
        .attr("class")
        .map(|c| class_tokens(c).any(|t| MATH_CLASS_TOKENS.contains(&t.as_str())))
        .unwrap_or(false)
}

fn script_math_type(el: &ElementRef<'_>) -> Option<String> {
    let ty = el.value().attr("type")?.to_ascii_lowercase();
    (ty.contains("math/tex") || ty.contains("math/asciimath")).then_some(ty)
}

fn non_empty_attr<'a>(el: &'a ElementRef<'_>, name: &str) -> Option<&'a str> {
    el.value().attr(name).map(str::trim).filter(|s| !s.is_empty())
}

/// True for elements that [`serialize_math`] handles.
pub fn is_math_node(el: &ElementRef<'_>) -> bool {
    match el.value().name() {
        "script" => script_math_type(el).is_some(),
        "math" => true,
        "img" | "span" => {
            has_math_class(el) && (non_empty_attr(el, "alt").is_some() || non_empty_attr(el, "data-latex").is_some())
        }
        _ => false,
    }
}

fn text_of(el: &ElementRef<'_>) -> String {
    el.text().collect::<String>()
}

fn wrap(src: &str, display: bool) -> String {
    if display {
        format!("$${src}$$")
    } else {
        format!("${src}$")
    }
}

/// Serializes a math node to delimiter-wrapped source. Returns `None` for
/// nodes that are not math or carry no source.
pub fn serialize_math(el: &ElementRef<'_>) -> Option<String> {
    match el.value().name() {
        "script" => {
            let ty = script_math_type(el)?;
            let src = text_of(el);
            let src = src.trim();
            if src.is_empty() {
                return None;
            }
            Some(wrap(src, ty.contains("mode=display")))
        }
        "math" => {
            let display = el
                .value()
                .attr("display")
                .map(|d| d.trim().eq_ignore_ascii_case("block"))
                .unwrap_or(false);
            let annotation = el.descendants().filter_map(ElementRef::wrap).find(|d| {
                d.value().name() == "annotation"
                    && d.value()
                        .attr("encoding")
                        .map(|e| e.trim().eq_ignore_ascii_case("application/x-tex"))
                        .unwrap_or(false)
            });
            match annotation {
                Some(a) => {
                    let tex = text_of(&a);
                    let tex = tex.trim();
                    if tex.is_empty() {
                        Some(el.html())
                    } else {
                        Some(wrap(tex, display))
                    }
                }
                None => Some(el.html()),
            }
        }
        "img" | "span" => {
            if !has_math_class(el) {
                return None;
            }
            let src = if el.value().name() == "img" {
                non_empty_attr(el, "alt").or_else(|| non_empty_attr(el, "data-latex"))
            } else {
                non_empty_attr(el, "data-latex").or_else(|| non_empty_attr(el, "alt"))
            }?;
            Some(wrap(src, false))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use scraper::{Html, Selector};

    fn first(html: &str, sel: &str) -> Option<String> {
        let doc = Html::parse_fragment(html);
        let s = Selector::parse(sel).unwrap();
        let el = doc.select(&s).next().unwrap();
        assert!(is_math_node(&el) || serialize_math(&el).is_none());
        serialize_math(&el)
    }

    #[test]
    fn display_script() {
        assert_eq!(
            first(r#"<script type="math/tex; mode=display">\int_0^1 x\,dx</script>"#, "script").unwrap(),
            r"$$\int_0^1 x\,dx$$"
        );
    }

    #[test]
    fn inline_script() {
        assert_eq!(first(r#"<script type="math/tex">x^2+1</script>"#, "script").unwrap(), "$x^2+1$");
        assert_eq!(first(r#"<script type="math/asciimath">x^2</script>"#, "script").unwrap(), "$x^2$");
        assert_eq!(first(r#"<script type="text/javascript">var a;</script>"#, "script"), None);
    }

    #[test]
    fn mathml_annotation_preferred() {
        let m = r#"<math><semantics><mrow><mi>x</mi></mrow><annotation encoding="application/x-tex">x</annotation></semantics></math>"#;
        assert_eq!(first(m, "math").unwrap(), "$x$");
        let m = r#"<math display="block"><semantics><mi>y</mi><annotation encoding="application/x-tex">y</annotation></semantics></math>"#;
        assert_eq!(first(m, "math").unwrap(), "$$y$$");
    }

    #[test]
    fn mathml_without_annotation_is_raw() {
        let m = "<math><mi>x</mi><mo>+</mo><mn>1</mn></math>";
        assert_eq!(first(m, "math").unwrap(), m);
    }

    #[test]
    fn math_class_images_and_spans() {
        assert_eq!(first(r#"<img class="latex" alt="E=mc^2" src="/e.png">"#, "img").unwrap(), "$E=mc^2$");
        assert_eq!(
            first(r#"<img class="mwe-math-fallback-image-inline" alt="{\displaystyle a}" src="/a.svg">"#, "img").unwrap(),
            r"${\displaystyle a}$"
        );
        assert_eq!(first(r#"<span class="math" data-latex="\pi">π</span>"#, "span").unwrap(), r"$\pi$");
        assert_eq!(first(r#"<img class="photo" alt="cat" src="/c.png">"#, "img"), None);
        assert_eq!(first(r#"<img class="latex" alt="  " src="/c.png">"#, "img"), None);
    }

    #[test]
    fn tokens() {
        let t: Vec<_> = class_tokens("site-footer  Main").collect();
        assert_eq!(t, ["site-footer", "site", "footer", "main"]);
    }
}
