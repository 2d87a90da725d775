//! Seeded synthetic corpora for training gate models and exercising stages
//! without network data. Content-word pools are split by parity into a
//! training half and a held-out half so evaluation text never shares
//! vocabulary with training text beyond function words.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierError, LinearTextClassifier, TrainConfig};
use crate::ingest::CrawlRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn half<'a>(pool: &[&'a str], split: Split) -> Vec<&'a str> {
    let want = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut seen = std::collections::HashSet::new();
    pool.iter()
        .filter(|w| seen.insert(**w))
        .enumerate()
        .filter(|(i, _)| i % 2 == want)
        .map(|(_, w)| *w)
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Training settings for models fit on the small synthetic corpora here.
/// The library defaults underfit corpora of a few thousand short documents.
pub fn synth_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 10, lr0: 0.5, seed, n_buckets: 1 << 18, dim: 16 }
}

const EN_FUNCTION: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "that", "it", "was", "for", "on", "are", "with", "as", "by", "this", "be",
    "at", "from", "or", "which", "an", "they", "we", "can", "have", "their", "there", "when", "would", "each",
];

const EN_CONTENT: &[&str] = &[
    "house", "water", "people", "number", "sound", "place", "years", "thing", "little", "world", "school", "family",
    "student", "country", "problem", "question", "government", "company", "system", "program", "example", "morning",
    "evening", "weather", "village", "mountain", "river", "garden", "kitchen", "teacher", "history", "computer",
    "polynomial", "derivative", "computed", "through", "thought", "should", "without", "between", "important",
    "different", "following", "together", "children", "another", "because", "something", "nothing", "everything",
    "written", "known", "showing", "reading", "writing", "running", "working", "learning", "building", "morning",
    "quickly", "slowly", "really", "usually", "certainly", "finally", "probably", "several", "natural", "general",
    "special", "national", "political", "economic", "social", "public", "private", "simple", "single", "double",
    "answer", "method", "result", "letter", "market", "office", "window", "street", "church", "forest", "summer",
    "winter", "yellow", "bright", "strong", "weight", "height", "length", "square", "circle", "triangle", "measure",
    "average", "support", "believe", "happen", "remember", "consider", "provide", "include", "continue", "develop",
    "explain", "describe", "produce", "receive", "question", "animal", "flower", "middle", "father", "mother",
];

const ZH_FUNCTION: &[&str] = &[
    "的", "是", "一", "个", "这", "在", "有", "我", "们", "了", "不", "和", "就", "也", "都", "而", "及", "与", "着",
    "关于", "对于", "因为", "所以", "如果", "可以", "一个", "这是", "那个", "没有", "什么",
];

const ZH_CONTENT: &[&str] = &[
    "数学", "问题", "微积分", "函数", "方程", "证明", "计算", "几何", "代数", "定理", "公式", "数值", "直线", "平面",
    "角度", "长度", "平方", "立方", "变量", "常数", "系统", "理论", "学生", "老师", "学校", "国家", "时间", "世界",
    "生活", "工作", "经济", "社会", "历史", "文化", "语言", "文字", "书籍", "阅读", "写作", "天气", "山水", "花草",
    "树木", "日月", "风雨", "城市", "农村", "家庭", "孩子", "父母", "朋友", "医院", "公司", "市场", "政府", "发展",
    "技术", "科学", "研究", "方法", "结果", "分析", "数据", "信息", "网络", "电脑", "手机", "电视", "音乐", "电影",
    "体育", "比赛", "运动", "健康", "医生", "食物", "早饭", "晚上", "明天", "昨天", "现在", "过去", "未来", "重要",
    "简单", "困难", "快速", "慢慢", "美丽", "高兴", "认为", "知道", "觉得", "希望", "开始", "结束", "继续", "解决",
];

const ZH_PUNCT: &[&str] = &["，", "。", "、", "：", "；"];

const OTHER_FUNCTION: &[&str] = &[
    "el", "la", "de", "que", "y", "en", "los", "der", "die", "und", "das", "ist", "nicht", "le", "les", "et", "des",
    "est", "une", "il", "di", "che", "per", "non", "het", "een", "van", "и", "в", "не", "на", "что",
];

const OTHER_CONTENT: &[&str] = &[
    "ciudad", "tiempo", "mujer", "hombre", "trabajo", "gobierno", "pueblo", "mundo", "noche", "ventana", "mañana",
    "siempre", "también", "después", "porque", "todavía", "Stadt", "Zeit", "Frau", "Mann", "Arbeit", "Regierung",
    "Welt", "Nacht", "Fenster", "morgen", "immer", "auch", "nachher", "weil", "noch", "Wissenschaft", "Schule",
    "ville", "temps", "femme", "homme", "travail", "monde", "nuit", "fenêtre", "demain", "toujours", "aussi",
    "après", "parce", "encore", "château", "città", "tempo", "donna", "uomo", "lavoro", "governo", "mondo", "notte",
    "finestra", "domani", "sempre", "anche", "perché", "ancora", "stad", "tijd", "vrouw", "werk", "regering",
    "wereld", "nacht", "raam", "altijd", "omdat", "город", "время", "женщина", "человек", "работа", "мир", "ночь",
    "окно", "завтра", "всегда", "тоже", "потому", "школа", "наука", "ψυχή", "χρόνος", "πόλη", "γυναίκα", "κόσμος",
    "νύχτα", "παράθυρο", "πάντα", "επίσης", "Straße", "Mädchen", "Krankenhaus", "Geschichte", "Bibliothek",
    "biblioteca", "hospital", "historia", "ejército", "canción", "corazón", "bibliothèque", "hôpital", "chanson",
    "cœur", "armée", "giorno", "canzone", "cuore", "esercito", "ziekenhuis", "geschiedenis", "больница", "история",
];

/// Language-identification samples: `(text, label)` with labels
/// `en`, `zh`, `other`, `n_per_class` of each, interleaved.
pub fn lang_samples(seed: u64, n_per_class: usize, split: Split) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let en = half(EN_CONTENT, split);
    let zh = half(ZH_CONTENT, split);
    let other = half(OTHER_CONTENT, split);
    let mut out = Vec::with_capacity(3 * n_per_class);
    for _ in 0..n_per_class {
        out.push((word_sentence(&mut r, EN_FUNCTION, &en), "en".to_string()));
        out.push((zh_sentence(&mut r, &zh), "zh".to_string()));
        out.push((word_sentence(&mut r, OTHER_FUNCTION, &other), "other".to_string()));
    }
    out
}

fn word_sentence(r: &mut ChaCha8Rng, function: &[&str], content: &[&str]) -> String {
    let n = r.random_range(8..20);
    let words: Vec<&str> = (0..n)
        .map(|_| {
            if r.random_bool(0.4) {
                *function.choose(r).unwrap()
            } else {
                *content.choose(r).unwrap()
            }
        })
        .collect();
    let mut s = words.join(" ");
    s.push('.');
    s
}

fn zh_sentence(r: &mut ChaCha8Rng, content: &[&str]) -> String {
    let n = r.random_range(6..20);
    let mut s = String::new();
    for i in 0..n {
        let pool = if r.random_bool(0.4) { ZH_FUNCTION } else { content };
        s.push_str(pool.choose(r).unwrap());
        if i + 1 < n && r.random_bool(0.08) {
            s.push_str(ZH_PUNCT.choose(r).unwrap());
        }
    }
    s.push('。');
    s
}

pub const SHARED_WORDS: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "is", "we", "this", "that", "with", "for", "on", "are", "as", "it", "by",
    "then", "so", "each", "one", "two", "first", "next", "now", "here", "all", "more", "find", "take", "make",
    "use", "show", "give", "get", "set", "write", "note", "see", "also", "only", "same", "other", "new", "good",
    "time", "way", "part", "case", "step", "result", "value", "point", "order", "form", "line", "group", "list",
];

const MATH_WORDS: &[&str] = &[
    "theorem", "lemma", "proof", "corollary", "integral", "derivative", "equation", "polynomial", "matrix", "vector",
    "eigenvalue", "prime", "divisible", "modulo", "function", "limit", "converges", "series", "inequality", "lattice",
    "isomorphism", "homomorphism", "topology", "manifold", "tangent", "gradient", "hypotenuse", "congruent",
    "parabola", "logarithm", "exponent", "factorial", "binomial", "permutation", "probability", "variance",
    "determinant", "orthogonal", "subspace", "integer", "rational", "irrational", "coefficient", "quadratic",
    "$x^2+y^2=z^2$", "$\\frac{a}{b}$", "$\\int_0^1 f(x)\\,dx$", "$\\sum_{i=1}^n i$", "$\\sqrt{2}$", "$a_n$",
    "$\\lim_{x\\to 0}$", "$f'(x)$", "$\\binom{n}{k}$", "$\\pi r^2$", "$e^{i\\pi}+1=0$", "$\\mathbb{R}$",
    "$\\alpha+\\beta$", "$\\det(A)$", "$\\nabla f$", "$x\\in S$", "$\\leq$", "$\\partial_t u$", "$\\epsilon>0$",
    "$\\sin\\theta$", "$\\cos 2x$", "$\\log_2 n$", "$n!$", "$\\mathcal{O}(n)$", "$\\forall x$", "$\\exists y$",
];

const PROSE_WORDS: &[&str] = &[
    "recipe", "butter", "flour", "sugar", "onion", "garlic", "simmer", "oven", "bake", "dough", "pepper", "salad",
    "sauce", "chicken", "noodles", "spoon", "bowl", "skillet", "vacation", "beach", "hotel", "flight", "museum",
    "hiking", "trail", "sunset", "village", "castle", "football", "match", "goal", "striker", "coach", "season",
    "stadium", "fans", "guitar", "concert", "album", "lyrics", "movie", "actor", "director", "garden", "tomato",
    "roses", "puppy", "kitten", "leash", "sweater", "jacket", "shoes", "fashion", "makeup", "wedding", "birthday",
    "coffee", "latte", "bakery", "market", "grocery", "weekend", "holiday", "festival", "dance", "painting",
];

/// One math/prose document sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MathSample {
    pub text: String,
    /// Ground-truth class.
    pub is_math: bool,
    /// Label used for training; differs from `is_math` for noisy samples.
    pub label_is_math: bool,
    /// Fraction of math tokens in positive documents; 0 for prose.
    pub density: f64,
}

/// Parameters of [`math_prose_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct MathCorpusSpec {
    pub n_per_class: usize,
    pub min_density: f64,
    pub max_density: f64,
    pub label_noise: f64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for MathCorpusSpec {
    fn default() -> Self {
        MathCorpusSpec { n_per_class: 1000, min_density: 0.2, max_density: 1.0, label_noise: 0.0, min_words: 20, max_words: 60 }
    }
}

/// Math documents mix math vocabulary (at a per-document density) with shared
/// filler words; prose documents mix prose vocabulary with the same filler.
/// Held-out sets come from a different seed over the same vocabulary.
pub fn math_prose_corpus(seed: u64, spec: &MathCorpusSpec) -> Vec<MathSample> {
    let mut r = rng(seed);
    let (math, prose) = (MATH_WORDS, PROSE_WORDS);
    let mut out = Vec::with_capacity(2 * spec.n_per_class);
    for _ in 0..spec.n_per_class {
        let density = r.random_range(spec.min_density..=spec.max_density);
        let text = mixed_text(&mut r, math, density, spec);
        let flip = r.random_bool(spec.label_noise);
        out.push(MathSample { text, is_math: true, label_is_math: !flip, density });

        let text = mixed_text(&mut r, prose, 0.5, spec);
        let flip = r.random_bool(spec.label_noise);
        out.push(MathSample { text, is_math: false, label_is_math: flip, density: 0.0 });
    }
    out
}

fn mixed_text(r: &mut ChaCha8Rng, topical: &[&str], density: f64, spec: &MathCorpusSpec) -> String {
    let n = r.random_range(spec.min_words..=spec.max_words);
    let mut words: Vec<&str> = Vec::with_capacity(n);
    let n_topic = ((n as f64 * density).round() as usize).clamp(1, n);
    for i in 0..n {
        words.push(if i < n_topic { topical.choose(r).unwrap() } else { SHARED_WORDS.choose(r).unwrap() });
    }
    for i in (1..words.len()).rev() {
        let j = r.random_range(0..=i);
        words.swap(i, j);
    }
    words.join(" ")
}

/// Numeric-heavy corpus: both classes draw words from [`SHARED_WORDS`] only;
/// math documents additionally carry many numbers. Training numbers come from
/// `[0, 5000)`, test numbers from `[5000, 10000)` plus decimal and scientific
/// forms, so only a number-aware featurization can generalize.
pub fn numeric_corpus(seed: u64, n_per_class: usize, split: Split) -> Vec<MathSample> {
    let mut r = rng(seed);
    let range = match split {
        Split::Train => 0..5000u32,
        Split::Test => 5000..10000u32,
    };
    let mut out = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        let n = r.random_range(20..40);
        let mut words: Vec<String> = (0..n).map(|_| SHARED_WORDS.choose(&mut r).unwrap().to_string()).collect();
        let nums = r.random_range(8..16);
        for _ in 0..nums {
            let v = r.random_range(range.clone());
            let tok = match (split, r.random_range(0..3)) {
                (Split::Test, 1) => format!("{}.{}", v, r.random_range(0..100)),
                (Split::Test, 2) => format!("{v}e-{}", r.random_range(1..9)),
                _ => v.to_string(),
            };
            let at = r.random_range(0..=words.len());
            words.insert(at, tok);
        }
        out.push(MathSample { text: words.join(" "), is_math: true, label_is_math: true, density: 1.0 });

        let n = r.random_range(28..56);
        let words: Vec<&str> = (0..n).map(|_| *SHARED_WORDS.choose(&mut r).unwrap()).collect();
        out.push(MathSample { text: words.join(" "), is_math: false, label_is_math: false, density: 0.0 });
    }
    out
}

/// Snapshots used by [`crawl_corpus`]; the last one starts a new year.
pub const CRAWL_SNAPSHOTS: [&str; 4] = ["CC-MAIN-2023-06", "CC-MAIN-2023-14", "CC-MAIN-2023-23", "CC-MAIN-2024-10"];

/// A popular image URL shared by many generated pages.
pub const SHARED_IMAGE_URL: &str = "https://cdn.example.net/shared/spacer.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageKind {
    Math,
    Prose,
    ChineseMath,
    Foreign,
    Boilerplate,
    Lorem,
    Nsfw,
    Mojibake,
    Punctuation,
    NonHtml,
}

/// A generated crawl record and what it was built to exercise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub record: CrawlRecord,
    pub kind: PageKind,
    /// Set on near-copies of an earlier page.
    pub near_duplicate_of: Option<String>,
    /// Set on pages reusing an earlier page's URL in a later snapshot.
    pub same_url_as: Option<String>,
}

fn en_sentence(r: &mut ChaCha8Rng) -> String {
    word_sentence(r, EN_FUNCTION, EN_CONTENT)
}

fn topical_paragraph(r: &mut ChaCha8Rng, topical: &[&str], density: f64) -> String {
    let spec = MathCorpusSpec { min_words: 30, max_words: 60, ..Default::default() };
    format!("{} {}", en_sentence(r), mixed_text(r, topical, density, &spec))
}

/// Plain text shaped like a generated page body: an English sentence plus
/// math or prose vocabulary.
pub fn page_text(r: &mut ChaCha8Rng, math: bool) -> String {
    if math {
        let density = r.random_range(0.4..=0.9);
        topical_paragraph(r, MATH_WORDS, density)
    } else {
        topical_paragraph(r, PROSE_WORDS, 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn html_page(title: &str, paragraphs: &[String], images: &[String], with_tex: bool) -> String {
    let mut body = String::new();
    body.push_str(&format!("<h1>{}</h1>\n", escape(title)));
    for (i, p) in paragraphs.iter().enumerate() {
        body.push_str(&format!("<p>{}</p>\n", escape(p)));
        if with_tex && i == 0 {
            body.push_str("<p>It follows that <script type=\"math/tex\">x^{2}+y^{2}=z^{2}</script> holds for each case.</p>\n");
        }
        if let Some(src) = images.get(i) {
            body.push_str(&format!("<img src=\"{src}\" alt=\"figure\">\n"));
        }
    }
    for src in images.iter().skip(paragraphs.len()) {
        body.push_str(&format!("<img src=\"{src}\">\n"));
    }
    format!(
        "<html><head><title>{t}</title><script>var track = 1;</script></head><body>\
         <nav><a href=\"/\">Home</a> <a href=\"/about\">About us</a></nav>\
         <article>\n{body}</article><footer>Copyright example site, all rights reserved.</footer></body></html>",
        t = escape(title)
    )
}

fn page_images(r: &mut ChaCha8Rng, i: usize) -> Vec<String> {
    let n = r.random_range(0..=3);
    (0..n)
        .map(|k| match r.random_range(0..10) {
            0 | 1 => SHARED_IMAGE_URL.to_string(),
            2 => "/static/site-logo.png".to_string(),
            _ => format!("/img/fig-{i}-{k}.png"),
        })
        .collect()
}

fn fetch_time(snapshot: &str, i: usize) -> chrono::DateTime<chrono::Utc> {
    use chrono::TimeZone;
    let year: i32 = snapshot[8..12].parse().unwrap();
    let week: i64 = snapshot[13..15].parse().unwrap();
    chrono::Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).unwrap()
        + chrono::Duration::days(7 * (week - 1))
        + chrono::Duration::seconds(i as i64)
}

fn near_copy(r: &mut ChaCha8Rng, html: &str) -> String {
    let extra = format!(" {}", SHARED_WORDS.choose(r).unwrap());
    match html.find("</p>") {
        Some(at) => format!("{}{}{}", &html[..at], extra, &html[at..]),
        None => html.to_string(),
    }
}

fn build_page(r: &mut ChaCha8Rng, i: usize, kind: PageKind) -> (String, String) {
    let title = format!("Page {i}");
    let math_paras = |r: &mut ChaCha8Rng| (0..r.random_range(2..=4)).map(|_| page_text(r, true)).collect::<Vec<_>>();
    match kind {
        PageKind::Math | PageKind::NonHtml => {
            let paras = math_paras(r);
            let imgs = page_images(r, i);
            let tex = r.random_bool(0.5);
            ("text/html".into(), html_page(&title, &paras, &imgs, tex))
        }
        PageKind::Prose => {
            let paras: Vec<String> = (0..r.random_range(2..=4)).map(|_| page_text(r, false)).collect();
            let imgs = page_images(r, i);
            ("text/html".into(), html_page(&title, &paras, &imgs, false))
        }
        PageKind::ChineseMath => {
            let zh = half(ZH_CONTENT, Split::Train);
            let latex: Vec<&str> = MATH_WORDS.iter().copied().filter(|w| w.starts_with('$')).collect();
            let paras: Vec<String> = (0..3)
                .map(|_| format!("{} {}", zh_sentence(r, &zh), latex[r.random_range(0..latex.len())]))
                .collect();
            ("text/html".into(), html_page(&title, &paras, &[], false))
        }
        PageKind::Foreign => {
            let paras: Vec<String> =
                (0..3).map(|_| (0..4).map(|_| word_sentence(r, OTHER_FUNCTION, OTHER_CONTENT)).collect::<Vec<_>>().join(" ")).collect();
            ("text/html".into(), html_page(&title, &paras, &[], false))
        }
        PageKind::Boilerplate => (
            "text/html".into(),
            "<html><body><nav><a href=\"/\">Home</a> <a href=\"/login\">Sign in to continue</a></nav>\
             <footer>Copyright example site, all rights reserved.</footer></body></html>"
                .into(),
        ),
        PageKind::Lorem => {
            let spec = MathCorpusSpec { min_words: 20, max_words: 25, ..Default::default() };
            let p = format!("{} Lorem ipsum placeholder for the worked solution.", mixed_text(r, MATH_WORDS, 0.8, &spec));
            ("text/html".into(), html_page(&title, &[p], &[], false))
        }
        PageKind::Nsfw => {
            let mut paras = math_paras(r);
            paras[0].push_str(" Visit our xxx gallery.");
            ("text/html".into(), html_page(&title, &paras, &[], true))
        }
        PageKind::Mojibake => {
            let mut paras = math_paras(r);
            paras[0].push_str(" The caf\u{FFFD} proof is next.");
            ("text/html".into(), html_page(&title, &paras, &[], true))
        }
        PageKind::Punctuation => {
            let mut paras = math_paras(r);
            paras.push("!?;:".repeat(400));
            ("text/html".into(), html_page(&title, &paras, &[], false))
        }
    }
}

const KIND_WEIGHTS: [(PageKind, u32); 10] = [
    (PageKind::Math, 45),
    (PageKind::Prose, 15),
    (PageKind::ChineseMath, 5),
    (PageKind::Foreign, 8),
    (PageKind::Boilerplate, 3),
    (PageKind::Lorem, 3),
    (PageKind::Nsfw, 3),
    (PageKind::Mojibake, 3),
    (PageKind::Punctuation, 3),
    (PageKind::NonHtml, 2),
];

/// A mixed crawl of `n` records over [`CRAWL_SNAPSHOTS`]: math pages,
/// prose, other languages, boilerplate-only pages, rule violations, near
/// copies across snapshots and URLs recrawled later in the same year.
pub fn crawl_corpus(seed: u64, n: usize) -> Vec<SynthPage> {
    let mut r = rng(seed);
    let total: u32 = KIND_WEIGHTS.iter().map(|(_, w)| w).sum();
    let mut pages: Vec<SynthPage> = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("rec-{i:05}");
        let snap_idx = r.random_range(0..CRAWL_SNAPSHOTS.len());
        let math_pages: Vec<usize> = (0..pages.len()).filter(|&j| pages[j].kind == PageKind::Math).collect();
        let roll = r.random_range(0..100);
        let (kind, url, snapshot, content_type, html, dup, same) = if roll < 10 && !math_pages.is_empty() {
            let src = &pages[*math_pages.choose(&mut r).unwrap()];
            let s = CRAWL_SNAPSHOTS.iter().position(|s| *s == src.record.snapshot_id).unwrap();
            let s = (s + r.random_range(0..2)).min(CRAWL_SNAPSHOTS.len() - 1);
            let html = near_copy(&mut r, &src.record.html);
            let url = format!("https://mirror{}.example.org/copy/{i}", i % 7);
            (PageKind::Math, url, CRAWL_SNAPSHOTS[s], "text/html".to_string(), html, Some(src.record.id.clone()), None)
        } else if roll < 15 && !math_pages.is_empty() {
            let src = &pages[*math_pages.choose(&mut r).unwrap()];
            let s = CRAWL_SNAPSHOTS.iter().position(|s| *s == src.record.snapshot_id).unwrap();
            let s = (s + 1).min(CRAWL_SNAPSHOTS.len() - 1);
            let (ct, html) = build_page(&mut r, i, PageKind::Math);
            (PageKind::Math, src.record.url.clone(), CRAWL_SNAPSHOTS[s], ct, html, None, Some(src.record.id.clone()))
        } else {
            let mut pick = r.random_range(0..total);
            let kind = KIND_WEIGHTS
                .iter()
                .find(|(_, w)| {
                    if pick < *w {
                        true
                    } else {
                        pick -= w;
                        false
                    }
                })
                .unwrap()
                .0;
            let (mut ct, html) = build_page(&mut r, i, kind);
            if kind == PageKind::NonHtml {
                ct = "application/pdf".into();
            }
            let scheme = if r.random_bool(0.15) { "http" } else { "https" };
            let url = format!("{scheme}://site{}.example.org/page/{i}", i % 23);
            (kind, url, CRAWL_SNAPSHOTS[snap_idx], ct, html, None, None)
        };
        let record = CrawlRecord {
            id,
            url,
            snapshot_id: snapshot.to_string(),
            fetch_time: fetch_time(snapshot, i),
            content_type,
            html,
        };
        pages.push(SynthPage { record, kind, near_duplicate_of: dup, same_url_as: same });
    }
    pages
}

/// Gate models matched to [`crawl_corpus`] pages.
#[derive(Debug, Clone)]
pub struct SynthModels {
    pub langid: LinearTextClassifier,
    pub math_recall: LinearTextClassifier,
    pub math_precision: LinearTextClassifier,
}

/// Trains the language model on [`lang_samples`] plus English page text,
/// and both math models on page-shaped math and prose text with balanced
/// classes.
pub fn pipeline_models(seed: u64) -> Result<SynthModels, ClassifierError> {
    let mut r = rng(seed);
    let mut samples = lang_samples(seed, 600, Split::Train);
    for k in 0..600 {
        samples.push((page_text(&mut r, k % 2 == 0), "en".to_string()));
    }
    let langid = crate::langid::train_langid(&samples, &synth_train_config(seed))?;
    let cfg = crate::mathfilter::MathGateConfig::default();
    let math_model = |s: u64| {
        let mut r = rng(s);
        let pos: Vec<String> = (0..800).map(|_| page_text(&mut r, true)).collect();
        let neg: Vec<String> = (0..800).map(|_| page_text(&mut r, false)).collect();
        crate::mathfilter::train_math(&pos, &neg, &synth_train_config(s), &cfg)
    };
    Ok(SynthModels { langid, math_recall: math_model(seed.wrapping_add(1))?, math_precision: math_model(seed.wrapping_add(2))? })
}
