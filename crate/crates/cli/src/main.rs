//! `mathcrawl` command-line tool: every stage as a standalone command over
//! JSONL shard directories, plus `run` for the whole pipeline from a config.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mathcrawl::pipeline::PipelineError;

#[derive(Parser)]
#[command(name = "mathcrawl", version, about = "Curate math-focused interleaved image-text corpora from web crawls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Input and output shard directories shared by per-stage commands.
#[derive(Args)]
pub struct ShardIo {
    /// Input shard directory or single JSONL file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output shard directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of output shards.
    #[arg(long, default_value_t = 8)]
    pub shards: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Jsonl,
    Warc,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Task {
    Langid,
    Math,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MathStage {
    Recall,
    Precision,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DedupScope {
    Snapshot,
    Neighbors,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KeeperArg {
    EarliestSnapshot,
    LatestSnapshot,
}

#[derive(Subcommand)]
pub enum Command {
    /// Read crawl records into id-sharded JSONL.
    Ingest {
        /// Input files (WARC, optionally gzipped, or JSONL).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Snapshot id for WARC input, or the default for JSONL records without one.
        #[arg(long)]
        snapshot: Option<String>,
        #[arg(long, default_value_t = 8)]
        shards: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract interleaved documents from ingested records.
    Extract {
        #[command(flatten)]
        io: ShardIo,
        /// Write rejected records here.
        #[arg(long)]
        keep_rejections: Option<PathBuf>,
    },
    /// Train a language or math classifier.
    ClfTrain {
        #[arg(long, value_enum)]
        task: Task,
        /// Positive examples: JSONL lines with `text` (and `label` for langid) or documents.
        #[arg(long)]
        pos: PathBuf,
        /// Negative examples, same format.
        #[arg(long)]
        neg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 1 << 21)]
        buckets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Keep documents in an allowed language.
    Langid {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: ShardIo,
        #[arg(long)]
        drop_log: PathBuf,
        #[arg(long, default_value_t = 0.65)]
        min_prob: f64,
        /// Comma-separated allowed languages.
        #[arg(long, value_delimiter = ',', default_value = "en,zh")]
        allowed: Vec<String>,
    },
    /// Keep documents whose math score reaches the threshold.
    MathGate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long, value_enum)]
        stage: MathStage,
        #[command(flatten)]
        io: ShardIo,
        #[arg(long)]
        drop_log: PathBuf,
    },
    /// Turn LLM-scored samples into classifier positives.
    LlmLabels {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 6)]
        cutoff: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// MinHash near-duplicate removal.
    DedupContent {
        #[arg(long, value_enum)]
        scope: DedupScope,
        #[command(flatten)]
        io: ShardIo,
        #[arg(long)]
        drop_log: PathBuf,
        #[arg(long, default_value_t = 5)]
        shingle_k: usize,
        #[arg(long, default_value_t = 112)]
        nperm: usize,
        #[arg(long, default_value_t = 14)]
        bands: usize,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = KeeperArg::EarliestSnapshot)]
        keeper: KeeperArg,
        #[arg(long)]
        signature_cache: Option<PathBuf>,
    },
    /// Keep the latest-year document per normalized URL.
    DedupUrl {
        #[command(flatten)]
        io: ShardIo,
        #[arg(long)]
        drop_log: PathBuf,
    },
    /// Lorem, punctuation, NSFW and mojibake filters.
    Rules {
        #[command(flatten)]
        io: ShardIo,
        /// NSFW wordlist; the built-in list when omitted.
        #[arg(long)]
        nsfw_list: Option<PathBuf>,
        #[arg(long)]
        drop_log: PathBuf,
        #[arg(long, default_value_t = 500)]
        lorem_chars: usize,
        #[arg(long, default_value_t = 0.3)]
        punct_max: f64,
    },
    /// Remove unwanted image URLs from documents.
    ImagesFilter {
        #[command(flatten)]
        io: ShardIo,
        /// Write per-URL document frequencies here.
        #[arg(long)]
        stats_out: PathBuf,
        #[arg(long)]
        drop_log: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        max_url_freq: usize,
        #[arg(long, default_value_t = 100)]
        max_images_per_doc: usize,
        /// Accept plain http image URLs.
        #[arg(long)]
        allow_http: bool,
    },
    /// Fetch the images listed in a manifest.
    ImagesDownload {
        /// Manifest to read and update in place.
        #[arg(long)]
        manifest: PathBuf,
        /// Build the manifest from these documents, reusing finished entries.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        concurrency: usize,
        #[arg(long, default_value_t = 4)]
        per_host: usize,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        #[arg(long, default_value_t = 10 * 1024 * 1024)]
        max_bytes: u64,
        #[arg(long, default_value_t = 2)]
        retries: u32,
    },
    /// Attach download results to document image slots.
    ImagesReintegrate {
        #[command(flatten)]
        io: ShardIo,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the configured pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated stages to run; ingest and extract always run.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        /// Validate the config and print the plan without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print the funnel report of a finished run.
    Stats {
        #[arg(long)]
        run_dir: PathBuf,
        /// Print the raw JSON report instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic crawl, matching models and a pipeline config.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Bad arguments or configuration (exit code 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match e.downcast_ref::<PipelineError>() {
        Some(PipelineError::Invalid(_)) => 2,
        Some(PipelineError::Stage { .. }) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&anyhow::Error::new(Invalid("x".into()))), 2);
        assert_eq!(exit_code(&anyhow::Error::new(PipelineError::Invalid(vec!["x".into()]))), 2);
        let stage = PipelineError::Stage { stage: "rules".into(), message: "x".into() };
        assert_eq!(exit_code(&anyhow::Error::new(stage)), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 1);
    }
}
