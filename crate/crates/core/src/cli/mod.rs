//! Command-line entry point: corpus validation, filtering audits,
//! optimization runs, pipeline runs, and report generation, driven by a TOML
//! configuration file plus flag overrides.

pub mod commands;
pub mod config;

pub use commands::{build_backend, AnyBackend};
pub use config::RunConfig;

use crate::corpus::Split;
use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "figcap", version, about = "Two-stage scientific figure caption pipeline and evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonOpts {
    /// TOML run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for outputs.
    #[arg(long, default_value = "figcap_out")]
    pub out_dir: PathBuf,
    /// Override [pipeline].seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Force the deterministic mock backend.
    #[arg(long)]
    pub mock: bool,
    /// Override the worker-pool size (0 = auto).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Corpus split: train | val | test.
    #[arg(long)]
    pub split: Option<String>,
    /// Override [filter].lambda.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Filter the target paragraph at inference time too.
    #[arg(long)]
    pub filtered_inference: bool,
    /// Stop after candidate selection (no stage-2 refinement).
    #[arg(long)]
    pub stage1_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file, write a load report, print statistics.
    Validate {
        /// Corpus JSONL (defaults to the configured path for --split).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Where to write the load report JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Dump per-chunk relevance scores for every record of a split.
    FilterAudit {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build one prompt template per category from the training split.
    Optimize {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the two-stage pipeline over a split; evaluate when gold captions exist.
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Exit 2 when the failed-record fraction exceeds this.
        #[arg(long)]
        fail_threshold: Option<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate externally produced caption files against references.
    Eval {
        /// One or more candidate JSONL files; each becomes a condition.
        #[arg(long, num_args = 1.., required = true)]
        candidates: Vec<PathBuf>,
        /// Reference JSONL (corpus records or {paper_id, caption} lines).
        #[arg(long)]
        references: PathBuf,
        /// Baseline condition name (defaults to the first candidate file).
        #[arg(long)]
        baseline: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Render delta tables from a JSON list of condition results.
    Report {
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        baseline: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn resolve_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
    if common.mock {
        cfg.backend.provider = "mock".to_string();
    }
    if let Some(workers) = common.workers {
        cfg.pipeline.workers = workers;
    }
    if let Some(lambda) = common.lambda {
        cfg.filter.lambda = lambda;
    }
    if common.filtered_inference {
        cfg.pipeline.filtered_inference = true;
    }
    if common.stage1_only {
        cfg.pipeline.stage1_only = true;
    }
    Ok(cfg)
}

fn resolve_split(common: &CommonOpts, default: Split) -> Result<Split> {
    match &common.split {
        Some(s) => s.parse::<Split>().map_err(|e| anyhow::anyhow!(e)),
        None => Ok(default),
    }
}

fn resolve_corpus(explicit: Option<&PathBuf>, cfg: &RunConfig, split: Split) -> Result<PathBuf> {
    if let Some(path) = explicit {
        return Ok(path.clone());
    }
    match cfg.corpus.path_for(split) {
        Some(path) => Ok(path.clone()),
        None => bail!("no corpus path for split {split}; pass --corpus or set [corpus].{split} in the config"),
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate { corpus, report_out, common } => {
            let cfg = resolve_config(&common)?;
            let split = resolve_split(&common, Split::Train)?;
            let corpus = resolve_corpus(corpus.as_ref(), &cfg, split)?;
            commands::cmd_validate(&cfg, &corpus, report_out.as_deref(), &common.out_dir)
        }
        Command::FilterAudit { corpus, common } => {
            let cfg = resolve_config(&common)?;
            let split = resolve_split(&common, Split::Train)?;
            let corpus = resolve_corpus(corpus.as_ref(), &cfg, split)?;
            commands::cmd_filter_audit(&cfg, &corpus, Some(split), &common.out_dir)
        }
        Command::Optimize { corpus, common } => {
            let cfg = resolve_config(&common)?;
            let corpus = resolve_corpus(corpus.as_ref(), &cfg, Split::Train)?;
            commands::cmd_optimize(&cfg, &corpus, &common.out_dir)
        }
        Command::Run { corpus, fail_threshold, common } => {
            let cfg = resolve_config(&common)?;
            let split = resolve_split(&common, Split::Test)?;
            let corpus = resolve_corpus(corpus.as_ref(), &cfg, split)?;
            commands::cmd_run(&cfg, &corpus, Some(split), fail_threshold, &common.out_dir)
        }
        Command::Eval { candidates, references, baseline, common } => {
            let cfg = resolve_config(&common)?;
            commands::cmd_eval(&cfg, &candidates, &references, baseline.as_deref(), &common.out_dir)
        }
        Command::Report { conditions, baseline, common } => {
            let cfg = resolve_config(&common)?;
            commands::cmd_report(&cfg, &conditions, baseline.as_deref(), &common.out_dir)
        }
    }
}
