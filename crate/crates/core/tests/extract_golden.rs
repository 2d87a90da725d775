use std::path::Path;

use mathcrawl::extract::golden::load_fixtures;

#[test]
fn golden_fixtures_match() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/extract");
    let fixtures = load_fixtures(&root).unwrap();
    assert!(fixtures.len() >= 12, "only {} fixtures", fixtures.len());
    let failures: Vec<String> = fixtures.iter().filter_map(|f| f.check().err()).collect();
    assert!(failures.is_empty(), "{}", failures.join("\n\n"));
}
