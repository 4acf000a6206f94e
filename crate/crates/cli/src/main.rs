mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_lambda_grid, ExperimentConfig};
use failure::{Failure, EXIT_CONFIG};

/// Experiment runner for the MFG coefficient inverse problem laboratory.
#[derive(Parser, Debug)]
#[command(name = "mfglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config (or a provenance.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Comma-separated λ values for `carleman` and `lemmas`.
    #[arg(long, global = true)]
    lambda_grid: Option<String>,
    /// Seed for the test-function families and the noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// With `sweep`: print the stability parameters without solving.
    #[arg(long, global = true)]
    params_only: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the forward problem by damped Picard iteration.
    Forward,
    /// Build an exact triple and its residuals.
    Manufacture,
    /// Evaluate the Carleman estimate over the test family and λ-grid.
    Carleman,
    /// Check the weighted-integral lemmas.
    Lemmas,
    /// Run the Hölder stability sweep.
    Sweep,
    /// Print the stability parameters.
    Params,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(rho) = cli.rho {
        cfg.stability.rho = rho;
    }
    if let Some(eps) = cli.epsilon {
        cfg.stability.epsilon = eps;
    }
    if let Some(text) = &cli.lambda_grid {
        let ls = parse_lambda_grid(text)?;
        cfg.carleman.lambdas = ls.clone();
        cfg.lemmas.lambdas = ls;
    }
    if let Some(seed) = cli.seed {
        cfg.carleman.seed = Some(seed);
        cfg.lemmas.seed = seed;
        if let Some(n) = &mut cfg.stability.noise {
            n.seed = seed;
        }
    }
    Ok(cfg)
}

fn set_threads() -> Result<(), Failure> {
    let Ok(text) = std::env::var("MFGLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::config("MFGLAB_THREADS", format!("expected a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config("MFGLAB_THREADS", e))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    set_threads()?;
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Forward => commands::forward(&cfg),
        Command::Manufacture => commands::manufacture(&cfg),
        Command::Carleman => commands::carleman(&cfg),
        Command::Lemmas => commands::lemmas(&cfg),
        Command::Sweep => commands::sweep(&cfg, cli.params_only),
        Command::Params => commands::params(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
