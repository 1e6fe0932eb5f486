//! Command-line front end. Every subcommand is a library function so tests
//! can drive it with injected clients.
//!
//! Exit status: 0 on success, 2 for configuration and usage errors, 1 for
//! failures while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::agent::{run_search, SearchEnv};
use crate::cache::{StrategyCache, CACHE_DIR_ENV};
use crate::config::{ConfigError, RunClients, RunConfig};
use crate::corpus::{load_dataset, save_dataset, Dataset};
use crate::dps::stratified_sample;
use crate::eval::{EvalMode, Evaluator, RunLog};
use crate::operators::{apply_team, OperatorConfig, OperatorContext};
use crate::report::{render_text, ClientIdentities, RunReport, Timings, REPORT_FILE, TIMINGS_FILE};
use crate::strategy::{enumerate_space, parse_strategy, Strategy};

pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const FINAL_DATASET_FILE: &str = "final.jsonl";
pub const CONVERSATION_FILE: &str = "conversation.json";

#[derive(Debug, Parser)]
#[command(name = "dpforge", version, about = "Search for data-processing strategies for fine-tuning corpora")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a full strategy search.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print every strategy in the search space, one per line.
    Enumerate,
    /// Apply one strategy to a dataset.
    Apply {
        #[arg(short, long)]
        strategy: String,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Operator settings and endpoints; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Strategy cache to reuse; without one the strategy runs uncached.
        #[arg(long, env = CACHE_DIR_ENV)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw a distribution-preserving sample.
    Sample {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        rate: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect or maintain a strategy cache.
    Cache {
        #[arg(long, env = CACHE_DIR_ENV)]
        dir: PathBuf,
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Print a run report.
    Report {
        /// Run directory or report file.
        path: PathBuf,
        /// Print the raw JSON report.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Stats,
    Verify,
    Prune {
        #[arg(long)]
        max_entries: Option<usize>,
        #[arg(long)]
        max_age_secs: Option<u64>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Parses `args` and runs the command, writing user output to `out` and
/// diagnostics to `err`. Returns the exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Run { config, output_dir } => cmd_run(&config, output_dir, out),
        Command::Enumerate => cmd_enumerate(out),
        Command::Apply { strategy, input, output, config, cache_dir, seed } => {
            cmd_apply(&strategy, &input, &output, config.as_deref(), cache_dir.as_deref(), seed, out)
        }
        Command::Sample { input, output, rate, config } => cmd_sample(&input, &output, rate, config.as_deref(), out),
        Command::Cache { dir, action } => cmd_cache(&dir, action, out),
        Command::Report { path, json } => cmd_report(&path, json, out),
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Runtime(e.into())
}

pub fn cmd_enumerate(out: &mut dyn Write) -> Result<(), CliError> {
    for f in enumerate_space() {
        writeln!(out, "{f}").map_err(io)?;
    }
    Ok(())
}

/// Artifacts of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Timings,
    pub output_dir: PathBuf,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Executes a search with the given clients and writes the run artifacts.
pub fn run_with(cfg: &RunConfig, clients: RunClients) -> anyhow::Result<RunOutcome> {
    let started = Instant::now();
    let out_dir = cfg.output_dir.clone();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(CONFIG_SNAPSHOT_FILE), cfg.to_toml()).context("writing config snapshot")?;

    let input = load_dataset(&cfg.dataset).with_context(|| format!("loading {}", cfg.dataset.display()))?;
    let cache = StrategyCache::open(cfg.cache_dir())?;
    let log = RunLog::to_file(out_dir.join(RUN_LOG_FILE)).context("creating run log")?;
    let mut evaluator = Evaluator::proxy(cfg.eval.clone()).with_log(log);
    if let Some(trainer) = &clients.trainer {
        evaluator = evaluator.with_trainer(trainer.clone(), out_dir.join("trainer_datasets"));
    }
    let search_cfg = cfg.search_config()?;
    let env = SearchEnv {
        agent: clients.agent.as_ref(),
        evaluator: &evaluator,
        ctx: &clients.ctx,
        cache: &cache,
        embedder: clients.embedder.as_ref(),
    };
    let result = run_search(&input, &search_cfg, &env)?;

    let final_start = Instant::now();
    let final_ds = cache
        .apply_with_reuse(&result.best_strategy, &input, &clients.ctx, result.rounds_executed + 1)?
        .dataset;
    let final_apply = final_start.elapsed();
    save_dataset(&final_ds, out_dir.join(FINAL_DATASET_FILE))?;
    let conversation = serde_json::to_string_pretty(&result.conversation)? + "\n";
    fs::write(out_dir.join(CONVERSATION_FILE), conversation)?;

    let ctx = &clients.ctx;
    let identities = ClientIdentities {
        agent: clients.agent.identity(),
        embedder: clients.embedder.identity(),
        screener: ctx.screener.identity(),
        optimizer: ctx.optimizer.identity(),
        generator: ctx.generator.identity(),
        scorer: ctx.scorer.identity(),
        trainer: clients.trainer.as_ref().map(|t| t.identity()),
    };
    let mode = match cfg.eval.mode {
        EvalMode::Proxy => "proxy",
        EvalMode::Trainer => "trainer",
    };
    let report =
        RunReport::build(&result, cfg.seed, mode, cfg.sampling_rate, &input, &final_ds, cache.stats(), identities);
    fs::write(out_dir.join(REPORT_FILE), report.to_json())?;
    let t = result.timings;
    let timings = Timings {
        sampling_ms: ms(t.sampling),
        screening_ms: ms(t.screening),
        processing_ms: ms(t.processing),
        evaluation_ms: ms(t.evaluation),
        search_total_ms: ms(t.total),
        final_apply_ms: ms(final_apply),
        run_total_ms: ms(started.elapsed()),
    };
    fs::write(out_dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(RunOutcome { report, timings, output_dir: out_dir })
}

pub fn cmd_run(config: &Path, output_dir: Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let clients = cfg.build_clients()?;
    let outcome = run_with(&cfg, clients)?;
    write!(out, "{}", render_text(&outcome.report, Some(&outcome.timings))).map_err(io)?;
    writeln!(out, "\nartifacts in {}", outcome.output_dir.display()).map_err(io)?;
    Ok(())
}

fn load_optional_config(config: Option<&Path>) -> Result<Option<RunConfig>, CliError> {
    config.map(RunConfig::load).transpose().map_err(CliError::from)
}

pub fn cmd_apply(
    strategy: &str,
    input: &Path,
    output: &Path,
    config: Option<&Path>,
    cache_dir: Option<&Path>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let f = parse_strategy(strategy).map_err(|e| config_err(format!("strategy {strategy:?}: {e}")))?;
    let cfg = load_optional_config(config)?;
    let d = load_dataset(input).map_err(config_err)?;
    let ctx = match &cfg {
        Some(c) => {
            let mut clients = c.build_clients()?;
            if let Some(s) = seed {
                clients.ctx.seed = s;
            }
            clients.ctx
        }
        None => OperatorContext::builtin(OperatorConfig::default(), seed.unwrap_or(0)),
    };
    let cache_dir = cache_dir.map(Path::to_path_buf).or_else(|| cfg.as_ref().map(RunConfig::cache_dir));
    let (result, reused) = apply_strategy(&f, &d, &ctx, cache_dir.as_deref())?;
    if result.fingerprint() == d.fingerprint() {
        fs::copy(input, output).with_context(|| format!("writing {}", output.display()))?;
    } else {
        save_dataset(&result, output).map_err(anyhow::Error::from)?;
    }
    writeln!(out, "{f}: {} -> {} samples ({} teams reused from cache)", d.len(), result.len(), reused).map_err(io)?;
    Ok(())
}

fn apply_strategy(
    f: &Strategy,
    d: &Dataset,
    ctx: &OperatorContext,
    cache_dir: Option<&Path>,
) -> anyhow::Result<(Dataset, usize)> {
    match cache_dir {
        Some(dir) => {
            let cache = StrategyCache::open(dir)?;
            let outcome = cache.apply_with_reuse(f, d, ctx, 0)?;
            Ok((outcome.dataset, outcome.reused))
        }
        None => Ok((f.teams().iter().fold(d.clone(), |cur, t| apply_team(*t, &cur, ctx)), 0)),
    }
}

pub fn cmd_sample(
    input: &Path,
    output: &Path,
    rate: f64,
    config: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(config_err(format!("rate {rate} outside (0, 1]")));
    }
    let d = load_dataset(input).map_err(config_err)?;
    let clients = match load_optional_config(config)? {
        Some(c) => c.build_clients()?,
        None => {
            let cfg = RunConfig::default();
            RunClients::builtin(&cfg)
        }
    };
    let (sample, summary) = stratified_sample(&d, rate, clients.ctx.screener.as_ref(), clients.embedder.as_ref())
        .map_err(anyhow::Error::from)?;
    save_dataset(&sample, output).map_err(anyhow::Error::from)?;
    writeln!(out, "{}", serde_json::to_string(&summary).map_err(anyhow::Error::from)?).map_err(io)?;
    Ok(())
}

pub fn cmd_cache(dir: &Path, action: CacheAction, out: &mut dyn Write) -> Result<(), CliError> {
    match action {
        CacheAction::Stats => {
            if !dir.exists() {
                return Err(config_err(format!("no cache at {}", dir.display())));
            }
            let cache = StrategyCache::open_read_only(dir).map_err(anyhow::Error::from)?;
            let entries = cache.entries();
            writeln!(out, "entries     {}", entries.len()).map_err(io)?;
            writeln!(out, "disk bytes  {}", cache.disk_bytes()).map_err(io)?;
            for e in entries {
                writeln!(out, "  {}  {:<48} {:>6} samples  round {}", &e.id[..12], e.strategy.to_string(), e.samples, e.producer_round)
                    .map_err(io)?;
            }
        }
        CacheAction::Verify => {
            if !dir.exists() {
                return Err(config_err(format!("no cache at {}", dir.display())));
            }
            let cache = StrategyCache::open_read_only(dir).map_err(anyhow::Error::from)?;
            let total = cache.entries().len();
            let bad = cache.verify();
            for m in &bad {
                writeln!(out, "mismatch {} ({}): {}", m.id, m.strategy, m.detail).map_err(io)?;
            }
            writeln!(out, "{} entries checked, {} mismatches", total, bad.len()).map_err(io)?;
            if !bad.is_empty() {
                return Err(anyhow!("{} cache entries failed verification", bad.len()).into());
            }
        }
        CacheAction::Prune { max_entries, max_age_secs } => {
            let cache = StrategyCache::open(dir).map_err(anyhow::Error::from)?;
            let removed = cache
                .prune(max_entries, max_age_secs.map(Duration::from_secs))
                .map_err(anyhow::Error::from)?;
            writeln!(out, "removed {removed} entries, {} remain", cache.entries().len()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn cmd_report(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(config_err(format!("no report at {}", file.display())));
    }
    if json {
        let text = fs::read_to_string(&file).map_err(io)?;
        write!(out, "{text}").map_err(io)?;
        return Ok(());
    }
    let report = RunReport::load(&file)?;
    let timings_path = file.with_file_name(TIMINGS_FILE);
    let timings = timings_path.is_file().then(|| Timings::load(&timings_path)).transpose()?;
    write!(out, "{}", render_text(&report, timings.as_ref())).map_err(io)?;
    Ok(())
}
