//! `lec` — experiment runner for robust training under label noise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lec_cli::runner::{run_experiment, sweep, SweepParam, DEFAULT_EPS_GRID};
use lec_cli::{parse_config, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "lec",
    about = "Train classifiers under label noise with ensemble-consensus filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (method, repeat) and write metrics CSVs.
    Run {
        /// Experiment config file (or a manifest from a previous run).
        config: PathBuf,
        /// Output directory for CSVs, summary, and manifest.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-run the experiment across a parameter grid.
    Sweep {
        config: PathBuf,
        /// Which parameter to vary: M (ensemble size) or eps (assumed
        /// noise-ratio multiplier).
        #[arg(long)]
        param: String,
        /// Comma-separated grid values, e.g. `1,3,5,inf` for M or
        /// `0.9,1.0,1.1` for eps (the eps default).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn load(config: &PathBuf) -> Result<ExperimentConfig, String> {
    parse_config(config).map_err(|e| e.to_string())
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            configure_threads(threads);
            load(&config).and_then(|cfg| {
                run_experiment(&cfg, &out)
                    .map(|result| {
                        println!(
                            "wrote {} method summaries to {}",
                            result.summaries.len(),
                            out.display()
                        );
                        for (method, s) in &result.summaries {
                            println!(
                                "  {method}: final {:.4} +/- {:.4}, peak {:.4} +/- {:.4}",
                                s.final_acc_mean, s.final_acc_std, s.peak_acc_mean, s.peak_acc_std
                            );
                        }
                    })
                    .map_err(|e| e.to_string())
            })
        }
        Command::Sweep {
            config,
            param,
            grid,
            out,
            threads,
        } => {
            configure_threads(threads);
            load(&config).and_then(|cfg| {
                let param: SweepParam =
                    param.parse().map_err(|e: lec_cli::ConfigError| e.to_string())?;
                let grid = if grid.is_empty() {
                    match param {
                        SweepParam::Eps => {
                            DEFAULT_EPS_GRID.iter().map(ToString::to_string).collect()
                        }
                        SweepParam::M => {
                            return Err("an M sweep needs an explicit --grid".to_string())
                        }
                    }
                } else {
                    grid
                };
                sweep(&cfg, param, &grid, &out)
                    .map(|results| {
                        println!(
                            "swept {} grid points; see {}/sweep_summary.csv",
                            results.len(),
                            out.display()
                        );
                    })
                    .map_err(|e| e.to_string())
            })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
