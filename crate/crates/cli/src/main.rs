//! Experiment orchestration: one subcommand per verification campaign.
//!
//! Every run resolves a configuration (file + dotted overrides), echoes it
//! into the output directory, executes the campaign, and writes JSON-lines
//! records plus CSV tables. Exit status 0 means every check passed, 2 means
//! a verification failed, 1 means the run itself could not be carried out.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kssp_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "kssp", version, about = "Spectral SPDE simulator and verification harness")]
struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path overrides, e.g. --set solver.dt=1e-4 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed override (shorthand for --set ensemble.master_seed=...).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Path-count override.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Suppress per-check console lines.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and export its norm/coefficient table.
    Simulate {
        /// Also write the binary coefficient dump.
        #[arg(long)]
        dump_coefficients: bool,
    },
    /// Monte-Carlo ensemble statistics and moment curves.
    Ensemble,
    /// Smoothing rates, maximal regularity, Itô isometry, convolution bounds.
    VerifyLemmas,
    /// Window sweep of the fixed-point contraction factor.
    Contraction,
    /// Deterministic energy identity and the mean-energy envelope.
    Energy,
    /// Truncation-level escalation and stopping-time tail fit.
    Globalize,
    /// dt/K refinement studies and the mild/strong oracle.
    Convergence,
    /// Growth and Lipschitz assumption certificates.
    Certify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("ensemble.master_seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.directory=\"{}\"", out.display()));
    }
    if let Some(paths) = cli.paths {
        overrides.push(format!("ensemble.n_paths={paths}"));
    }

    let config = match ExperimentConfig::load(cli.config.as_deref(), &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let outcome = match &cli.command {
        Command::Simulate { dump_coefficients } => {
            commands::simulate(&config, *dump_coefficients, cli.quiet)
        }
        Command::Ensemble => commands::ensemble(&config, cli.quiet),
        Command::VerifyLemmas => commands::verify_lemmas(&config, cli.quiet),
        Command::Contraction => commands::contraction(&config, cli.quiet),
        Command::Energy => commands::energy(&config, cli.quiet),
        Command::Globalize => commands::globalize(&config, cli.quiet),
        Command::Convergence => commands::convergence(&config, cli.quiet),
        Command::Certify => commands::certify(&config, cli.quiet),
    };

    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed (see records.jsonl)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
