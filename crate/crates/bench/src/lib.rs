//! Criterion benchmarks for the per-document hot paths; see `benches/`.
