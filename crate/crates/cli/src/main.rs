//! `bbint`: sampling, estimation, quadrature and convergence sweeps for
//! path integrals of Brownian bridges and free Brownian motion.
//!
//! Exit codes: 0 on success or PASS, 2 on configuration errors, 3 when a
//! verdict fails, 1 on I/O errors.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use commands::{Format, Outcome};
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "bbint", version, about = "Brownian bridge path-integral experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the configuration's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Raw samples of Z or Y.
    Sample,
    /// Empirical moment generating function.
    Mgf,
    /// Monte Carlo moments next to quadrature.
    Moments,
    /// K1, alpha0 and the alpha1 bracket.
    Bounds,
    /// Bridge statistics versus the two-sided free limit.
    Theorem1,
    /// Receding end points versus the one-sided limit.
    Theorem2,
    /// Free statistics along start-point sequences.
    Lemma4,
    /// Heat kernel with potential over (x, y, t).
    Bloch,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Mgf => "mgf",
            Command::Moments => "moments",
            Command::Bounds => "bounds",
            Command::Theorem1 => "theorem1",
            Command::Theorem2 => "theorem2",
            Command::Lemma4 => "lemma4",
            Command::Bloch => "bloch",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("configuration error: no --config given")]
    NoConfig,
    #[error("configuration error: --workers must be at least 1")]
    Workers,
    #[error(transparent)]
    Core(#[from] bridge_integrals::Error),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::NoConfig | CliError::Workers | CliError::Core(_) => 2,
            CliError::Read { .. } | CliError::Write { .. } | CliError::Pool(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Some(false)) => ExitCode::from(3),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bbint: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<Option<bool>, CliError> {
    let path = cli.config.as_ref().ok_or(CliError::NoConfig)?;
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Workers);
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let outcome = pool.install(|| dispatch(cli.command, &cfg))?;
    let format = match cli.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    write_outputs(&dir, cli.command, &cfg, &outcome, format)?;
    for n in &outcome.notes {
        log::info!("{n}");
    }
    match outcome.pass {
        Some(p) => println!("{}: {}", cli.command.name(), if p { "PASS" } else { "FAIL" }),
        None => println!("{}: done", cli.command.name()),
    }
    Ok(outcome.pass)
}

fn dispatch(command: Command, cfg: &ExperimentConfig) -> bridge_integrals::Result<Outcome> {
    match command {
        Command::Sample => commands::sample(cfg),
        Command::Mgf => commands::mgf(cfg),
        Command::Moments => commands::moments(cfg),
        Command::Bounds => commands::bounds(cfg),
        Command::Theorem1 => commands::theorem1(cfg),
        Command::Theorem2 => commands::theorem2(cfg),
        Command::Lemma4 => commands::lemma4(cfg),
        Command::Bloch => commands::bloch(cfg),
    }
}

/// Writes `<stem>.csv` (or `<stem>.json`) and `<stem>.summary.json`. The
/// summary embeds the resolved configuration, so rerunning from it
/// reproduces every file.
fn write_outputs(dir: &Path, command: Command, cfg: &ExperimentConfig, out: &Outcome, format: Format) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    let stem = cfg.output.stem.clone().unwrap_or_else(|| command.name().to_string());
    let write = |name: String, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| CliError::Write { path, source })
    };
    match (&out.csv, format) {
        (Some(csv), Format::Csv) => write(format!("{stem}.csv"), csv.clone())?,
        _ => write(format!("{stem}.json"), pretty(&out.json))?,
    }
    let summary = json!({
        "command": command.name(),
        "pass": out.pass,
        "notes": out.notes,
        "config": cfg,
        "result": match command {
            Command::Theorem1 | Command::Theorem2 | Command::Lemma4 => out.json.get("verdicts").cloned().unwrap_or_default(),
            Command::Bounds => out.json.clone(),
            _ => serde_json::Value::Null,
        },
    });
    write(format!("{stem}.summary.json"), pretty(&summary))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}
