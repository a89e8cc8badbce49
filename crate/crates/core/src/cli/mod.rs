use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anomagent::config::{Config, ConfigError, Overrides};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

mod advantages;
mod build;
mod metrics;
mod score;
mod synthesize;
mod validate;

pub const EXIT_FAILURES: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "anomagent",
    version,
    about = "Tool-calling anomaly synthesis agent toolkit"
)]
pub struct Cli {
    /// TOML configuration file. Without one, a default simulated backend is used.
    #[arg(long, global = true, env = "ANOMAGENT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Base seed; every per-row seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Remote endpoint; overrides the config file.
    #[arg(
        long,
        global = true,
        env = "ANOMAGENT_ENDPOINT",
        hide_env_values = true
    )]
    pub endpoint: Option<String>,
    /// Remote API key; overrides the config file.
    #[arg(long, global = true, env = "ANOMAGENT_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run agent episodes for each task row.
    Synthesize(synthesize::Args),
    /// Build supervised trajectories from anomaly-image specs.
    Build(build::Args),
    /// Score episodes with the three-part reward.
    Score(score::Args),
    /// Group-normalized advantages and, with log-probabilities, the GRPO loss.
    Advantages(advantages::Args),
    /// Check trajectory rows against the transcript format.
    Validate(validate::Args),
    /// Inception Score and IC-L over precomputed inputs.
    Metrics(metrics::Args),
}

/// A bad invocation or input: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<ConfigError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_FAILURES
    }
}

/// Result of a command that ran to completion.
pub struct Outcome {
    pub failures: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> ExitCode {
        if self.failures == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_FAILURES)
        }
    }
}

/// Written next to each command's output as `<out>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
    pub counts: BTreeMap<String, usize>,
}

pub struct Ctx {
    pub config_path: Option<PathBuf>,
    pub overrides: Overrides,
    pub started: Instant,
}

impl Ctx {
    /// Resolved configuration: flags, then environment, then file, then defaults.
    pub fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config_path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply(&self.overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn manifest(&self, command: &str) -> RunManifest {
        RunManifest {
            command: command.into(),
            config: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
            counts: BTreeMap::new(),
        }
    }

    pub fn finish(&self, mut manifest: RunManifest, out: &Path) -> Result<()> {
        manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = manifest_path(out);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `<out>.<suffix>` in the same directory.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

pub fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Non-blank lines with their 1-based line numbers.
pub fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let ctx = Ctx {
        config_path: cli.config,
        overrides: Overrides {
            seed: cli.seed,
            endpoint: cli.endpoint,
            api_key: cli.api_key,
        },
        started: Instant::now(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Synthesize(a) => synthesize::run(&ctx, a),
        Command::Build(a) => build::run(&ctx, a),
        Command::Score(a) => score::run(&ctx, a),
        Command::Advantages(a) => advantages::run(&ctx, a),
        Command::Validate(a) => validate::run(&ctx, a),
        Command::Metrics(a) => metrics::run(&ctx, a),
    })
}
