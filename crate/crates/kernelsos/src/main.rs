//! Experiment CLI: `run` executes a JSON experiment config and writes a
//! JSON-lines result file; `plot` aggregates a result file into a CSV
//! table for one figure axis.

use clap::{Parser, Subcommand};
use kernelsos::bench::{self, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kernelsos", version, about = "Kernel sum-of-squares optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list, comma-separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory for the result file (default: current dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a result file into a CSV plot table on stdout.
    Plot {
        /// Path to a JSON-lines result file produced by `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// View name: error-vs-noise, cost-vs-budget, or init-summary.
        #[arg(long)]
        view: String,
    },
}

fn run(config_path: &PathBuf, seeds: Option<Vec<u64>>, out: Option<PathBuf>) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| format!("cannot read {}: {e}", config_path.display()))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    let records = bench::run_experiment(&config).map_err(|e| e.to_string())?;

    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
    let out_path = out_dir.join(format!("{stem}.results.jsonl"));
    bench::write_results_atomic(&out_path, &records).map_err(|e| e.to_string())?;

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "wrote {} rows ({} failed) to {}",
        records.len(),
        failed,
        out_path.display()
    );
    // Exit 2 signals partial failure: the file is complete but some rows
    // carry an error instead of metrics.
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn plot(input: &PathBuf, view: &str) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| format!("cannot read {}: {e}", input.display()))?;
    let records = bench::from_jsonl(&text).map_err(|e| e.to_string())?;
    let table = bench::emit_plot_data(&records, view).map_err(|e| e.to_string())?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seeds, out } => run(config, seeds.clone(), out.clone()),
        Command::Plot { input, view } => plot(input, view),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
