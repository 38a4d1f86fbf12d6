//! Argument parsing and dispatch for the `mapt` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, print, BoundsArgs};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mapt", version, about = "Multi-agent state entropy pre-training and fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reward-free pre-training with TRPE, once per seed.
    Pretrain(RunArgs),
    /// MA-TRPO on the sparse goal task, from uniform or pre-trained policies.
    Finetune(RunArgs),
    /// Property battery over seeded tiny games.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write verify.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixture seed (overrides verify.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-trial mismatch bounds for the three objectives.
    Bounds {
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        /// Support size of the joint distribution.
        #[arg(long, default_value_t = 100)]
        support: usize,
        /// Support size of one agent's marginal; defaults to --support.
        #[arg(long)]
        local_support: Option<usize>,
        /// Comma-separated trial counts.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        trials: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn load(config: Option<&Path>, seeds: &[u64]) -> CliResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !seeds.is_empty() {
        cfg.seeds = seeds.to_vec();
    }
    Ok(cfg)
}

/// Runs one parsed command, printing its report.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(a) => {
            let cfg = load(a.config.as_deref(), &a.seeds)?;
            let report = commands::pretrain(&cfg, &a.out)?;
            for s in &report.seeds {
                match (s.metrics.first(), s.metrics.last()) {
                    (Some(f), Some(l)) => print(&format!(
                        "seed {}: mean ζ1 {:.4} (epoch 1) -> {:.4} (epoch {})\n",
                        s.seed, f.mean_zeta1, l.mean_zeta1, l.epoch
                    )),
                    _ => print(&format!("seed {}: no training epochs, heatmaps only\n", s.seed)),
                }
            }
            print(&format!("outputs in {}\n", a.out.display()));
            Ok(())
        }
        Command::Finetune(a) => {
            let cfg = load(a.config.as_deref(), &a.seeds)?;
            let report = commands::finetune(&cfg, &a.out)?;
            for s in &report.seeds {
                let first = s
                    .first_rewarded_epoch()
                    .map_or("never".to_string(), |e| format!("epoch {e}"));
                let last = s.metrics.last().expect("evaluation row");
                print(&format!(
                    "seed {}: first nonzero return {first}; final goal fraction {:.3}\n",
                    s.seed, last.goal_fraction
                ));
            }
            print(&format!("outputs in {}\n", a.out.display()));
            Ok(())
        }
        Command::Verify { config, out, seed } => {
            let mut cfg = load(config.as_deref(), &[])?;
            if let Some(s) = seed {
                cfg.verify.seed = s;
            }
            let report = commands::verify(&cfg, out.as_deref())?;
            print(&report.table());
            if report.passed() {
                Ok(())
            } else {
                let failed = report.checks.iter().filter(|c| !c.passed).count();
                Err(CliError::Verification(format!("{failed} check(s) failed")))
            }
        }
        Command::Bounds {
            lipschitz,
            horizon,
            support,
            local_support,
            trials,
            agents,
            delta,
        } => {
            let args = BoundsArgs {
                lipschitz,
                horizon,
                joint_support: support,
                local_support: local_support.unwrap_or(support),
                trials,
                agents,
                delta,
            };
            print(&commands::bounds(&args)?);
            Ok(())
        }
    }
}
