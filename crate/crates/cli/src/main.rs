use std::path::PathBuf;

use clap::{Parser, Subcommand};

use ttuq_cli::config::{ExperimentConfig, Method};
use ttuq_cli::pipeline;

#[derive(Parser)]
#[command(
    name = "ttuq",
    about = "Tensor-train UQ experiment driver for the parametric diffusion problem"
)]
struct Cli {
    /// Experiment configuration file (flat `key = value` format)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restricts to a single method: tt, mc, or qmc
    #[arg(long)]
    method: Option<String>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full pipeline for every configured method and run (default)
    Run,
    /// Builds the coefficient tensor and writes it as .ttb
    BuildCoeff,
    /// Reads the coefficient .ttb, solves, writes the solution .ttb
    Solve,
    /// Reads the solution .ttb and writes a moments CSV
    Moments,
    /// Reads the solution .ttb and writes a (q, density) CSV
    Pdf,
    /// Monte Carlo / QMC baselines only
    Baseline,
    /// Sweeps study.levels and/or study.n, appending rows to the CSV
    Study,
}

fn run(cli: Cli) -> ttuq::Result<()> {
    if let Ok(t) = std::env::var("TTUQ_THREADS") {
        let n: usize = t
            .parse()
            .map_err(|_| ttuq::Error::invalid(format!("TTUQ_THREADS={t:?} is not a number")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(m) = &cli.method {
        cfg.methods = vec![Method::from_str(m)?];
    }
    match cli.command.unwrap_or(Cmd::Run) {
        Cmd::Run => pipeline::cmd_run(&cfg),
        Cmd::BuildCoeff => pipeline::cmd_build_coeff(&cfg),
        Cmd::Solve => pipeline::cmd_solve(&cfg),
        Cmd::Moments => pipeline::cmd_moments(&cfg),
        Cmd::Pdf => pipeline::cmd_pdf(&cfg),
        Cmd::Baseline => pipeline::cmd_baseline(&cfg),
        Cmd::Study => pipeline::cmd_study(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
