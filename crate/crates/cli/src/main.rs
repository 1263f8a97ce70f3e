use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qtraj_cli::commands::{self, SimulateOptions};

/// Simulation and analysis of monitored quantum systems: trajectory/filter
/// pairs, their fidelity and martingale diagnostics, and the fixed-point
/// structure of the underlying Lindblad generator.
#[derive(Parser)]
#[command(name = "qtraj", version)]
struct Cli {
    /// Worker threads for trajectory ensembles (default: QTRAJ_WORKERS
    /// environment variable, then all cores). Results are identical for
    /// any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the fixed-point structure report for a model
    Analyze { config: PathBuf },
    /// Simulate trajectory/filter pairs and write time-series CSV files
    Simulate {
        config: PathBuf,
        /// Number of trajectories (default: experiment.n_traj, then 1)
        #[arg(long)]
        trajectories: Option<u64>,
        /// Override the seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write one combined long-format CSV instead of one file per
        /// trajectory
        #[arg(long)]
        combined: bool,
    },
    /// Run the configured Monte Carlo experiment; writes summary.csv and
    /// manifest.toml
    Experiment {
        config: PathBuf,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("QTRAJ_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successes; anything else is input misuse
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = resolve_workers(cli.workers);
    let result = match cli.command {
        Command::Analyze { config } => commands::cmd_analyze(&config).map(|report| {
            print!("{report}");
        }),
        Command::Simulate {
            config,
            trajectories,
            seed,
            out,
            combined,
        } => {
            let opts = SimulateOptions {
                trajectories,
                seed,
                out_dir: out,
                combined,
            };
            commands::cmd_simulate(&config, &opts).map(|written| {
                for path in written {
                    println!("{}", path.display());
                }
            })
        }
        Command::Experiment { config, out } => {
            commands::cmd_experiment(&config, &out, workers).map(|(summary, written)| {
                for path in written {
                    println!("{}", path.display());
                }
                for a in &summary.assertions {
                    println!(
                        "assertion {}: {} (statistic {:.6e}, bound {:.6e}{})",
                        a.name,
                        if a.pass { "pass" } else { "FAIL" },
                        a.value,
                        a.bound,
                        if a.theorem_backed { "" } else { ", exploratory" },
                    );
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
