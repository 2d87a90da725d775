//! Curation of math-focused interleaved image-text corpora from web crawls.

pub mod doc;
pub mod hashing;
pub mod ingest;

pub use doc::{plain_text, InterleavedDoc};
pub use ingest::CrawlRecord;
pub mod extract;
pub mod classifier;
pub mod langid;
pub mod mathfilter;
pub mod synth;
pub mod dedup;
pub mod rules;
pub mod images;
pub mod pipeline;
