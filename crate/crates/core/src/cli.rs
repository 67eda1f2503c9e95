//! The `memaudit` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 backend failure
//! ceiling exceeded, 4 I/O error (including an unreachable backend).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::rundir::{
    unix_now, write_json_atomic, CorpusRef, RunDir, RunManifest, ARTIFACT_VERSION,
};
use crate::audit::{
    mine_high_risk, run_audit, AuditConfig, AuditError, CheckpointError, MiningResult, RunOptions,
};
use crate::backend::server;
use crate::backend::{
    Backend, BackendError, HttpBackend, HttpOptions, MockBackend, MockModelConfig, MockSettings,
    RetryPolicy,
};
use crate::corpus::{load_corpus, write_corpus, CorpusError, CorpusIndex};
use crate::prompts::{template_digests, StrategyId};
use crate::report::{recommend_strategy, write_report, ReportError, ReportOptions, RiskTier};

pub const TOKEN_ENV: &str = "MEMAUDIT_TOKEN";

#[derive(Debug, Parser)]
#[command(
    name = "memaudit",
    version,
    about = "Audit text-to-image backends for training-data memorization"
)]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find captions whose baseline generations resemble corpus images.
    Mine(MineArgs),
    /// Generate and score every caption under every strategy and seed.
    Run(RunArgs),
    /// Aggregate a finished run into summary, correlation and distribution files.
    Report(ReportArgs),
    /// Print the recommended strategy for an application risk tier.
    Recommend {
        #[arg(long)]
        tier: RiskTier,
    },
    /// Serve the mock backend over HTTP.
    ServeMock(ServeMockArgs),
    /// Write a random unit-norm corpus, for trials and tests.
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus_manifest: PathBuf,
    #[arg(long)]
    pub corpus_store: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// `mock:<settings.json>` or `http:<url>`.
    #[arg(long)]
    pub backend: String,
    #[arg(long, default_value_t = 5000)]
    pub sample: usize,
    #[arg(long, default_value_t = 0.85)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Baseline generations tried per sampled caption.
    #[arg(long, default_value_t = 8)]
    pub mining_seeds: u64,
    #[arg(long, default_value_t = 0.10)]
    pub failure_ceiling: f64,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long, default_value = "high_risk_captions.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Continue the run in this directory; other flags except
    /// `--concurrency` are taken from its config.json.
    #[arg(long, conflicts_with_all = ["captions", "out"])]
    pub resume: Option<PathBuf>,
    /// `high_risk_captions.json` from `mine`, or a JSON array of ids.
    #[arg(long, required_unless_present = "resume")]
    pub captions: Option<PathBuf>,
    #[arg(long, required_unless_present = "resume")]
    pub out: Option<PathBuf>,
    #[arg(long, required_unless_present = "resume")]
    pub corpus_manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "resume")]
    pub corpus_store: Option<PathBuf>,
    #[arg(long, required_unless_present = "resume")]
    pub backend: Option<String>,
    /// `all` or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub strategies: String,
    #[arg(long, default_value_t = 75)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.85)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.10)]
    pub failure_ceiling: f64,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Stop after this many new cells, leaving a resumable checkpoint.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Also write SVG histograms.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeMockArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Ceiling(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ceiling(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        let msg = e.to_string();
        match e {
            AuditError::FailureCeiling { .. } => CliError::Ceiling(msg),
            AuditError::Io(_)
            | AuditError::Corpus(CorpusError::Io(_))
            | AuditError::Checkpoint(CheckpointError::Io(_))
            | AuditError::Interrupted { .. } => CliError::Io(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Io(format!("corpus: {e}")),
            _ => CliError::Config(format!("corpus: {e}")),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(context: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        let msg = format!("{}: {e}", context.display());
        if e.kind() == std::io::ErrorKind::InvalidData {
            CliError::Config(msg)
        } else {
            CliError::Io(msg)
        }
    }
}

fn backend_err(e: BackendError) -> CliError {
    match e {
        BackendError::Unavailable(_) | BackendError::Timeout(_) => {
            CliError::Io(format!("backend unreachable: {e}"))
        }
        _ => CliError::Config(format!("backend: {e}")),
    }
}

/// A connected backend plus the retry policy that suits it.
pub struct Connected {
    pub backend: Box<dyn Backend>,
    pub retry: RetryPolicy,
}

fn load_mock_settings(path: &Path) -> Result<MockSettings, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("mock settings {}: {e}", path.display())))
}

/// Resolves `mock:<path>` or `http:<url>`. The mock answers from `corpus`.
pub fn connect_backend(selector: &str, corpus: &Arc<CorpusIndex>) -> Result<Connected, CliError> {
    if let Some(path) = selector.strip_prefix("mock:") {
        let settings = load_mock_settings(Path::new(path))?;
        let config =
            MockModelConfig::new(Arc::clone(corpus), settings).map_err(CliError::Config)?;
        return Ok(Connected {
            backend: Box::new(MockBackend::new(config)),
            retry: RetryPolicy::immediate(RetryPolicy::default().max_attempts),
        });
    }
    if let Some(url) = selector.strip_prefix("http:") {
        let url = if url.starts_with("//") {
            format!("http:{url}")
        } else if url.contains("://") {
            url.to_string()
        } else {
            format!("http://{url}")
        };
        let options = HttpOptions {
            bearer_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ..HttpOptions::default()
        };
        let backend = HttpBackend::connect(&url, options).map_err(backend_err)?;
        return Ok(Connected {
            backend: Box::new(backend),
            retry: RetryPolicy::default(),
        });
    }
    Err(CliError::Config(format!(
        "backend must be mock:<settings.json> or http:<url>, got {selector:?}"
    )))
}

fn load(c: &CorpusArgs) -> Result<Arc<CorpusIndex>, CliError> {
    Ok(Arc::new(load_corpus(&c.corpus_manifest, &c.corpus_store)?))
}

pub fn parse_strategies(s: &str) -> Result<Vec<StrategyId>, CliError> {
    if s.trim() == "all" {
        return Ok(StrategyId::ALL.to_vec());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<StrategyId>()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

/// Accepts either a mining result or a bare list of caption ids.
#[derive(Deserialize)]
#[serde(untagged)]
enum CaptionsFile {
    Mined(MiningResult),
    List(Vec<String>),
}

fn read_captions(path: &Path) -> Result<Vec<String>, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    match serde_json::from_slice(&bytes) {
        Ok(CaptionsFile::Mined(m)) => Ok(m.captions),
        Ok(CaptionsFile::List(l)) => Ok(l),
        Err(e) => Err(CliError::Config(format!(
            "captions file {}: {e}",
            path.display()
        ))),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn absolute_selector(selector: &str) -> String {
    match selector.strip_prefix("mock:") {
        Some(p) => format!("mock:{}", absolute(Path::new(p)).display()),
        None => selector.to_string(),
    }
}

fn options(concurrency: Option<usize>, retry: RetryPolicy) -> RunOptions {
    let mut o = RunOptions {
        retry,
        ..RunOptions::default()
    };
    if let Some(c) = concurrency {
        o.concurrency = c.max(1);
    }
    o
}

const ASSUMPTIONS: &[&str] = &[
    "a generation is similar when its six-decimal max similarity to the corpus is >= tau",
    "mining keeps a caption when at least one baseline probe is similar",
    "generation frequencies divide by captions x seeds for each strategy separately",
    "a prompt is high-mean when its mean similarity over successful seeds is >= tau",
    "correlations pair per-prompt max similarity with per-prompt mean aesthetic or relevance",
    "failed cells are excluded from means and counts and listed per record",
    "http generation requests use 512x512, 50 steps, guidance 7.5 unless the backend overrides them",
];

#[derive(Serialize)]
struct MineOutput<'a> {
    #[serde(flatten)]
    result: &'a MiningResult,
    backend: String,
}

fn cmd_mine(a: &MineArgs) -> Result<(), CliError> {
    let cfg = AuditConfig {
        tau: a.tau,
        sample_n: a.sample,
        mining_seeds: a.mining_seeds,
        rng_seed: a.seed,
        failure_ceiling: a.failure_ceiling,
        ..AuditConfig::default()
    };
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let corpus = load(&a.corpus)?;
    let conn = connect_backend(&a.backend, &corpus)?;
    let result = mine_high_risk(
        &corpus,
        conn.backend.as_ref(),
        &cfg,
        &options(a.concurrency, conn.retry),
    )?;
    log::info!(
        "{} of {} sampled captions are high risk",
        result.captions.len(),
        result.sampled
    );
    write_json_atomic(
        &a.out,
        &MineOutput {
            result: &result,
            backend: conn.backend.descriptor().model_label.clone(),
        },
    )
    .map_err(io_err(&a.out))?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let (run, manifest, captions, fresh) = match &a.resume {
        Some(dir) => {
            let run = RunDir::new(dir);
            let manifest = run.read_manifest().map_err(io_err(&run.config_path()))?;
            let captions = run.read_captions().map_err(io_err(&run.captions_path()))?;
            (run, manifest, captions, false)
        }
        None => {
            let cfg = AuditConfig {
                tau: a.tau,
                seeds_per_run: a.seeds,
                strategies: parse_strategies(&a.strategies)?,
                rng_seed: a.seed,
                failure_ceiling: a.failure_ceiling,
                ..AuditConfig::default()
            };
            cfg.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let captions_path = a.captions.as_ref().expect("required by clap");
            let captions = read_captions(captions_path)?;
            let corpus = CorpusRef {
                manifest: absolute(a.corpus_manifest.as_ref().expect("required by clap")),
                store: absolute(a.corpus_store.as_ref().expect("required by clap")),
                digest: String::new(),
            };
            let selector = absolute_selector(a.backend.as_ref().expect("required by clap"));
            let manifest = RunManifest {
                artifact_version: ARTIFACT_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command_line: std::env::args().collect(),
                started_at: unix_now(),
                config: cfg,
                backend_selector: selector,
                backend: placeholder_descriptor(),
                corpus,
                template_digests: template_digests(),
                assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
            };
            (
                RunDir::new(a.out.as_ref().expect("required by clap")),
                manifest,
                captions,
                true,
            )
        }
    };

    let corpus = Arc::new(load_corpus(
        &manifest.corpus.manifest,
        &manifest.corpus.store,
    )?);
    let mut manifest = manifest;
    if fresh {
        manifest.corpus.digest = corpus.source_digest().to_string();
    } else if manifest.corpus.digest != corpus.source_digest() {
        return Err(CliError::Config(format!(
            "corpus digest changed since the run started ({} now, {} recorded)",
            corpus.source_digest(),
            manifest.corpus.digest
        )));
    }
    let conn = connect_backend(&manifest.backend_selector, &corpus)?;
    let descriptor = conn.backend.descriptor().clone();
    if fresh {
        manifest.backend = descriptor;
        run.create().map_err(io_err(run.root()))?;
        run.write_manifest(&manifest)
            .map_err(io_err(&run.config_path()))?;
        run.write_captions(&captions)
            .map_err(io_err(&run.captions_path()))?;
    } else if descriptor.embedding_dim != manifest.backend.embedding_dim
        || descriptor.model_label != manifest.backend.model_label
    {
        return Err(CliError::Config(format!(
            "backend now reports {} (dim {}), the run used {} (dim {})",
            descriptor.model_label,
            descriptor.embedding_dim,
            manifest.backend.model_label,
            manifest.backend.embedding_dim
        )));
    }

    let mut opts = options(a.concurrency, conn.retry);
    opts.batch_size = a.batch_size.max(1);
    opts.images = Some(run.images());
    opts.max_new_cells = a.stop_after;
    let records = run_audit(
        &captions,
        &corpus,
        conn.backend.as_ref(),
        &manifest.config,
        Some(&run.outcomes_path()),
        &opts,
    )?;
    run.write_records(&records)
        .map_err(io_err(&run.records_path()))?;
    let failed: usize = records.iter().map(|r| r.failures.len()).sum();
    log::info!("{} records written, {failed} failed cells", records.len());
    println!("{}", run.root().display());
    Ok(())
}

/// Stands in until the handshake has filled in the real descriptor.
fn placeholder_descriptor() -> crate::backend::BackendDescriptor {
    crate::backend::BackendDescriptor {
        kind: crate::backend::BackendKind::Mock,
        endpoint: None,
        embedding_dim: 0,
        model_label: String::new(),
        deterministic: false,
        max_in_flight: None,
    }
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let paths = write_report(
        &RunDir::new(&a.run),
        &ReportOptions {
            bins: a.bins,
            svg: a.svg,
        },
    )?;
    println!("{}", paths.report_md.display());
    Ok(())
}

fn cmd_serve_mock(a: &ServeMockArgs) -> Result<(), CliError> {
    let corpus = load(&a.corpus)?;
    let settings = load_mock_settings(&a.config)?;
    let config = MockModelConfig::new(corpus, settings).map_err(CliError::Config)?;
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let handle = server::serve(
        Arc::new(MockBackend::new(config)),
        &a.addr,
        a.workers,
        token,
    )
    .map_err(|e| CliError::Io(format!("bind {}: {e}", a.addr)))?;
    println!("{}", handle.url());
    handle
        .join()
        .map_err(|e| CliError::Io(format!("server: {e}")))
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let corpus = CorpusIndex::synthetic(a.rows, a.dim, a.seed)?;
    write_corpus(&corpus, &a.manifest, &a.store)?;
    let reloaded = load_corpus(&a.manifest, &a.store)?;
    println!("{}", reloaded.source_digest());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Mine(a) => cmd_mine(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
        Command::Recommend { tier } => {
            println!("{}", recommend_strategy(*tier));
            Ok(())
        }
        Command::ServeMock(a) => cmd_serve_mock(a),
        Command::SynthCorpus(a) => cmd_synth(a),
    }
}
