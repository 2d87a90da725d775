//! JSONL shard directories: the persistence format between stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::doc::InterleavedDoc;
use crate::ingest::{shard_index, Keyed};

#[derive(Debug, thiserror::Error)]
pub enum CorpusIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{0} contains no shard-*.jsonl files")]
    NoShards(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusIoError + '_ {
    move |source| CorpusIoError::Io { path: path.to_path_buf(), source }
}

pub fn shard_file_name(i: usize) -> String {
    format!("shard-{i:05}.jsonl")
}

/// Writes one line per item to `path`.
pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusIoError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CorpusIoError::Io { path: path.into(), source: e.into() })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes `n_shards` files into `dir`, routing each item by the hash of its
/// id and keeping input order within a shard. Empty shards are written too.
pub fn write_shards<T: Serialize + Keyed>(dir: &Path, items: &[T], n_shards: usize) -> Result<(), CorpusIoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut buckets: Vec<Vec<&T>> = vec![Vec::new(); n_shards.max(1)];
    for item in items {
        buckets[shard_index(item.key(), n_shards.max(1))].push(item);
    }
    for (i, bucket) in buckets.iter().enumerate() {
        write_lines(&dir.join(shard_file_name(i)), bucket)?;
    }
    Ok(())
}

/// Shard files of a directory in name order, or the path itself when it is
/// a file.
pub fn shard_files(path: &Path) -> Result<Vec<PathBuf>, CorpusIoError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("shard-") && name.ends_with(".jsonl")
        })
        .collect();
    if files.is_empty() {
        return Err(CorpusIoError::NoShards(path.to_path_buf()));
    }
    files.sort();
    Ok(files)
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusIoError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusIoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Reads every shard of a directory (or a single JSONL file) in shard order.
pub fn read_shards<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusIoError> {
    let mut out = Vec::new();
    for f in shard_files(path)? {
        out.extend(read_lines(&f)?);
    }
    Ok(out)
}

/// Reads documents and checks the slot invariants of each.
pub fn read_docs(path: &Path) -> Result<Vec<InterleavedDoc>, CorpusIoError> {
    let docs: Vec<InterleavedDoc> = read_shards(path)?;
    for d in &docs {
        d.check_invariants().map_err(|e| CorpusIoError::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("document {}: {e}", d.id),
        })?;
    }
    Ok(docs)
}
