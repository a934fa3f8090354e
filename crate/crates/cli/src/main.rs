use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use svrpg::harness::{run_experiment, run_probes, solve_command, ExperimentConfig, ProbeConfig};
use svrpg::Execution;

/// Derivative-free policy gradient for discrete-time LQR.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati equation and print K*, rho(A - B K*), C(K0), C(K*) and the initial gap.
    Solve { system: PathBuf },
    /// Run every (run, seed) pair of an experiment and write traces, medians and a summary.
    Run {
        experiment: PathBuf,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also write median_gap.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run statistical probes and write probes.json.
    Probe {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

/// Exit status when every step succeeded but some run did not complete.
const INCOMPLETE_RUNS: u8 = 2;

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Solve { system } => {
            let report = solve_command(&system).with_context(|| format!("solving {}", system.display()))?;
            print!("{}", report.render());
        }
        Command::Run {
            experiment,
            seed,
            output_dir,
            svg,
        } => {
            let mut cfg = ExperimentConfig::load(&experiment)
                .with_context(|| format!("loading {}", experiment.display()))?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            cfg.emit_svg |= svg;
            let out = run_experiment(&cfg, Execution::best_available())?;
            for (label, s) in &out.summary.labels {
                let gap = s.final_gap_median.map_or("n/a".to_string(), |g| format!("{g:.6e}"));
                let status: Vec<String> = s.termination_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!(
                    "{label}: evals={} one_point={} two_point={} median_final_gap={gap} [{}]",
                    s.cost_evaluations,
                    s.one_point_queries,
                    s.two_point_queries,
                    status.join(" ")
                );
            }
            println!("wrote {} files to {}", out.files.len(), cfg.output_dir.display());
            if !out.summary.all_completed() {
                eprintln!("some runs did not complete");
                return Ok(ExitCode::from(INCOMPLETE_RUNS));
            }
        }
        Command::Probe {
            config,
            seed,
            output_dir,
        } => {
            let mut cfg = ProbeConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let (reports, path) = run_probes(&cfg, Execution::best_available())?;
            for r in &reports {
                let scalars: Vec<String> = r.scalars.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
                println!("{}: {}", r.name, scalars.join(" "));
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
