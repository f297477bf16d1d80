//! `panelcca`: ingest, preprocess and analyze space-time panel data.
//!
//! Every run writes its artifacts into a fresh timestamped directory under
//! `--out`, together with a `manifest.json` recording the effective
//! configuration, its hash and the hashes of every input file. Exit codes:
//! 0 success, 1 usage or input error, 2 numerical failure.

mod cmd;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "panelcca",
    version,
    about = "Panel regressions, canonical correlation analysis and sparse multi-set CCA",
    args_override_self = true
)]
struct Cli {
    /// Root directory for run artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Seed for stochastic steps (required by `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// key=value file whose entries override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a panel CSV or extract a panel from a grid CSV.
    #[command(args_override_self = true)]
    Ingest(cmd::ingest::IngestArgs),
    /// Winsorize, detrend, standardize and optionally smooth a panel.
    #[command(args_override_self = true)]
    Preprocess(cmd::preprocess::PreprocessArgs),
    /// Panel regressions of cpi on temp and pdsi.
    #[command(args_override_self = true)]
    Regress(cmd::regress::RegressArgs),
    /// Two-set canonical correlation analysis.
    #[command(args_override_self = true)]
    Cca(cmd::cca::CcaArgs),
    /// Sparse multi-set CCA over a panel and gridded fields.
    #[command(args_override_self = true)]
    Smcca(cmd::smcca::SmccaArgs),
    /// Rolling correlations and their regression on event indicators.
    #[command(args_override_self = true)]
    Compound(cmd::compound::CompoundArgs),
    /// Generate planted-structure synthetic data.
    #[command(args_override_self = true)]
    Synth(cmd::synth::SynthArgs),
}

/// Shared context handed to every subcommand.
pub(crate) struct Global {
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Load `--config` key=value lines and append them as flags; appended
/// occurrences win because every command sets `args_override_self`.
fn augmented_args() -> anyhow::Result<Vec<String>> {
    let mut args: Vec<String> = std::env::args().collect();
    let mut config_path: Option<String> = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            config_path = args.get(i + 1).cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            config_path = Some(v.to_string());
        }
    }
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow::anyhow!("cannot read config file '{path}': {e}"))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                anyhow::bail!("config file '{path}' line {}: expected key=value", idx + 1);
            };
            args.push(format!("--{}", key.trim()));
            args.push(value.trim().to_string());
        }
    }
    Ok(args)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let global = Global { out: cli.out, seed: cli.seed };
    match cli.command {
        Command::Ingest(args) => cmd::ingest::run(&global, args),
        Command::Preprocess(args) => cmd::preprocess::run(&global, args),
        Command::Regress(args) => cmd::regress::run(&global, args),
        Command::Cca(args) => cmd::cca::run(&global, args),
        Command::Smcca(args) => cmd::smcca::run(&global, args),
        Command::Compound(args) => cmd::compound::run(&global, args),
        Command::Synth(args) => cmd::synth::run(&global, args),
    }
}

fn main() -> ExitCode {
    let args = match augmented_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<panelcca_core::Error>()
                .map_or(false, |err| err.is_numerical());
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

