//! Command line front end: `dppfit simulate|fit|replicate|compare --config <json>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dppfit::harness::{self, ExperimentConfig, FitConfig};
use dppfit::DppError;

#[derive(Parser)]
#[command(name = "dppfit", version, about = "Simulate and fit stationary determinantal point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the configured one, else the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to DPPFIT_THREADS, else one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the configured replicates and write one CSV per pattern.
    Simulate(Common),
    /// Fit the configured models to a pattern.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Sandwich standard errors and Wald intervals.
        #[arg(long)]
        se: bool,
        /// Information criterion and model ranking.
        #[arg(long)]
        ic: bool,
    },
    /// Simulate and fit every replicate and summarize the estimates.
    Replicate {
        #[command(flatten)]
        common: Common,
        /// Sandwich standard errors and Wald coverage for each replicate.
        #[arg(long)]
        se: bool,
    },
    /// Tally how often each candidate model is selected by the information criterion.
    Compare(Common),
}

fn experiment(common: &Common) -> Result<(harness::ResolvedConfig, PathBuf), DppError> {
    let mut cfg = ExperimentConfig::from_json_file(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = out_dir(common, cfg.out_dir.as_deref());
    Ok((cfg.resolve()?, out))
}

fn out_dir(common: &Common, configured: Option<&Path>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), DppError> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = experiment(&common)?;
            let threads = harness::resolve_threads(common.threads)?;
            report(&harness::cmd_simulate(&cfg, &out, threads)?);
        }
        Command::Fit { common, se, ic } => {
            let cfg = FitConfig::from_json_file(&common.config)?;
            let fit = harness::cmd_fit(&cfg, se, ic)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            if let Some(dir) = &common.out {
                harness::write_fit_report(&fit, dir)?;
            }
        }
        Command::Replicate { common, se } => {
            let (mut cfg, out) = experiment(&common)?;
            cfg.config.standard_errors |= se;
            let threads = harness::resolve_threads(common.threads)?;
            let summary = harness::replicate(&cfg, threads)?;
            print!("{}", harness::summary_table(&summary)?);
            for (kind, count) in &summary.failures {
                eprintln!("failed replicates ({kind}): {count}");
            }
            report(&harness::write_summary(&summary, &out)?);
        }
        Command::Compare(common) => {
            let (cfg, out) = experiment(&common)?;
            let threads = harness::resolve_threads(common.threads)?;
            let summary = harness::compare(&cfg, threads)?;
            for s in &summary.selections {
                println!("{}: {} of {} ({:.3})", s.model, s.count, summary.successes, s.frequency);
            }
            report(&harness::write_comparison(&summary, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
