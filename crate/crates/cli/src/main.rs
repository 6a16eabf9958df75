mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::config::RawConfig;
use crate::error::{CliError, ErrorReport};
use crate::manifest::Artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    GenData,
    Extract,
    Mask,
    Pretrain,
    Finetune,
    Mine,
    Index,
    Search,
    Eval,
    Diagnose,
    GradCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Extract => "extract",
            Command::Mask => "mask",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Mine => "mine",
            Command::Index => "index",
            Command::Search => "search",
            Command::Eval => "eval",
            Command::Diagnose => "diagnose",
            Command::GradCheck => "grad-check",
        }
    }
}

/// Structure-aware dense retrieval pipeline.
#[derive(Debug, Parser)]
#[command(name = "sdr", version)]
struct Cli {
    command: Command,

    /// TOML config; each command reads its own table, e.g. `[pretrain]`.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config value; `key` alone addresses the command's table.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for numeric code (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Single-threaded numeric paths.
    #[arg(long)]
    strict_determinism: bool,
}

pub struct Context {
    pub command: &'static str,
    pub raw: RawConfig,
    pub seed: Option<u64>,
    pub parallel: bool,
    pub artifacts: Artifacts,
}

impl Context {
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Validation(format!("`{}` needs a seed (--seed or `seed` in the config)", self.command)))
    }
}

fn setup(cli: &Cli) -> Result<Context, CliError> {
    let command = cli.command.name();
    let mut raw = RawConfig::load(cli.config.as_deref())?;
    let roots: Vec<&str> = Command::value_variants().iter().map(|c| c.name()).collect();
    for s in &cli.set {
        raw.set(command, &roots, s)?;
    }
    let seed = cli.seed.or(raw.seed()?);
    let threads = if cli.strict_determinism { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(Context {
        command,
        raw,
        seed,
        parallel: !cli.strict_determinism,
        artifacts: Artifacts::default(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.name();
    let mut ctx = match setup(&cli) {
        Ok(c) => c,
        Err(e) => return fail(command, &e, Vec::new()),
    };
    match commands::run(cli.command, &mut ctx) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let removed = ctx.artifacts.remove_outputs();
            fail(command, &e, removed)
        }
    }
}

fn fail(command: &str, e: &CliError, removed_outputs: Vec<String>) -> ExitCode {
    let code = e.exit_code();
    let report = ErrorReport {
        command,
        kind: if e.is_validation() { "validation" } else { "runtime" },
        exit_code: code,
        message: e.to_string(),
        removed_outputs,
    };
    eprintln!("{}", serde_json::to_string(&report).expect("report serializes"));
    ExitCode::from(code as u8)
}
