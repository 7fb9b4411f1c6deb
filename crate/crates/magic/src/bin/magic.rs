//! Command-line surface: reproducible selective-inference runs from a JSON
//! config, with optional seed/output/worker overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use magic::harness::{cmd_graph_infer, cmd_infer, cmd_simulate_null, cmd_simulate_power, RunConfig};

#[derive(Parser)]
#[command(
    name = "magic",
    version,
    about = "Selective inference after randomized L1-penalized selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Selective p-values and intervals for one lasso/logistic dataset.
    Infer(CommonArgs),
    /// Null-calibration study: replications, screening, pooled null
    /// p-values, KS uniformity check, ECDF export.
    SimulateNull(CommonArgs),
    /// Logistic power study at the configured test level.
    SimulatePower(CommonArgs),
    /// Per-edge selective p-values for a graph data matrix.
    GraphInfer(CommonArgs),
}

fn load(args: &CommonArgs) -> magic::Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run() -> magic::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Infer(args) => {
            let report = cmd_infer(&load(args)?)?;
            if let Some(note) = &report.note {
                println!("{note}");
            }
            println!(
                "infer: {} variables tested, report in {}",
                report.results.len(),
                report.config.out_dir
            );
        }
        Command::SimulateNull(args) => {
            let report = cmd_simulate_null(&load(args)?)?;
            println!(
                "simulate-null: kept {}/{} replications, {} null p-values, KS p = {}",
                report.kept,
                report.attempts,
                report.n_null_pvalues,
                report.ks_p.map_or("n/a".into(), |p| format!("{p:.4}")),
            );
            println!("report in {}", report.config.out_dir);
        }
        Command::SimulatePower(args) => {
            let report = cmd_simulate_power(&load(args)?)?;
            println!(
                "simulate-power: power {:.3} at level {}, selection proportion {:.3} ({}/{})",
                report.power, report.alpha, report.selection_proportion, report.kept,
                report.attempts
            );
            println!("report in {}", report.config.out_dir);
        }
        Command::GraphInfer(args) => {
            let report = cmd_graph_infer(&load(args)?)?;
            if let Some(note) = &report.note {
                println!("{note}");
            }
            println!(
                "graph-infer: {} edges tested, report in {}",
                report.edges.len(),
                report.config.out_dir
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
