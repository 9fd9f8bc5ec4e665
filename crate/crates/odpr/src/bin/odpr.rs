use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use odpr::config::ExperimentConfig;
use odpr::harness;
use odpr::verify;

#[derive(Parser)]
#[command(
    name = "odpr",
    about = "Offline decoupled prioritized resampling: priority weights, \
             bandit and tabular experiments, and verification suites."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (key = value lines); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        Ok(cfg.with_overrides(self.seed, self.out.clone()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute and persist priority weights plus a per-iteration report.
    ComputePriorities(CommonArgs),
    /// Train the configured learner on the Gaussian bandit across seeds.
    RunBandit(CommonArgs),
    /// Exact tabular experiments (worked example or random MDPs).
    RunTabular(CommonArgs),
    /// Export resampling scatters and actor paths as CSV.
    ExportFigures(CommonArgs),
    /// Run verification suites against their oracles.
    PropertySuite {
        /// Suite name; runs every suite if omitted.
        #[arg(long)]
        suite: Option<String>,
        /// Trial count for the randomized suites.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON reports here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::ComputePriorities(args) => {
            let path = harness::compute_priorities(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::RunBandit(args) => {
            let path = harness::run_bandit(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::RunTabular(args) => {
            let path = harness::run_tabular(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::ExportFigures(args) => {
            let dir = harness::export_figures(&args.load()?)?;
            println!("wrote {}", dir.display());
        }
        Command::PropertySuite { suite, trials, seed, out } => {
            let names: Vec<&str> = match &suite {
                Some(s) => vec![s.as_str()],
                None => verify::SUITES.to_vec(),
            };
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
            }
            let mut failures = 0usize;
            for name in names {
                let report = verify::run_suite(name, trials, seed)?;
                let verdict = if report.passed { "PASS" } else { "FAIL" };
                println!(
                    "suite {name}: {verdict} ({} trials, worst margin {:.3e})",
                    report.trials.len(),
                    report.worst_margin()
                );
                if !report.passed {
                    failures += 1;
                    for t in report.trials.iter().filter(|t| !t.pass) {
                        println!("  failed trial {} (margin {:.3e})", t.label, t.margin);
                    }
                }
                if let Some(dir) = &out {
                    let path = dir.join(format!("suite_{name}.json"));
                    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                }
            }
            if failures > 0 {
                bail!("{failures} suite(s) failed");
            }
        }
    }
    Ok(())
}
