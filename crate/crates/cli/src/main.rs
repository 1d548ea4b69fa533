//! `infogap` command-line runner.

mod config;
mod output;
mod report;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infogap_core::provenance::config_hash;
use infogap_core::verify::run_verification;

use crate::config::ExperimentConfig;
use crate::output::{write_artifacts, Artifact};

/// Error carrying the process exit code: 1 for failed checks or runs,
/// 2 for usage and configuration problems.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<infogap_core::Error> for CliError {
    fn from(e: infogap_core::Error) -> Self {
        use infogap_core::Error as E;
        match e {
            E::Config(_) | E::Argument(_) | E::Parse(_) | E::Validation(_) => Self::config(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "infogap", version, about = "Generalization diagnostics for imitation learning")]
struct Cli {
    /// Override the base seed of the config (and of `verify`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "INFOGAP_THREADS")]
    threads: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in oracle and invariant checks.
    Verify,
    /// Execute an experiment config.
    Run { config: PathBuf },
    /// Summarize the run outputs in a directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Verify => verify(cli),
        Command::Run { config } => run_config(cli, config),
        Command::Report { dir } => report(cli, dir),
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn verify(cli: &Cli) -> Result<u8, CliError> {
    let seed = cli.seed.unwrap_or(0);
    let report = run_verification(seed);
    let text = report.to_text();
    print!("{text}");
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("verify_results"));
    let hash = config_hash(&("verify", seed))?;
    let artifacts = vec![
        Artifact {
            name: "verify.txt".into(),
            contents: format!("{}\n{text}", infogap_core::provenance::csv_header_line(&hash)),
        },
        Artifact::json("verify.json", &hash, &report)?,
    ];
    print_written(&write_artifacts(&out, &artifacts, cli.force)?);
    if report.passed {
        Ok(0)
    } else {
        eprintln!("failed checks: {}", report.failures().join(", "));
        Ok(1)
    }
}

fn run_config(cli: &Cli, path: &Path) -> Result<u8, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out().cloned())
        .unwrap_or_else(|| PathBuf::from("results"));
    output::check_clobber(&out, run::artifact_names(&cfg), cli.force)?;
    eprintln!("running {}", cfg.command());
    let (artifacts, warnings) = run::execute(&cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    print_written(&write_artifacts(&out, &artifacts, cli.force)?);
    Ok(0)
}

fn report(cli: &Cli, dir: &Path) -> Result<u8, CliError> {
    let (artifacts, summary) = report::build_report(dir)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    let out = cli.out.clone().unwrap_or_else(|| dir.to_path_buf());
    print_written(&write_artifacts(&out, &artifacts, cli.force)?);
    Ok(0)
}
