//! Batch runner: `chaining-lab <subcommand> --config <path> [--seed N] [--out DIR]`.

pub mod config;
pub mod output;
pub mod run;
pub mod scenarios;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use config::ExperimentConfig;
use output::{config_hash, ArtifactWriter};
pub use run::{run_task, Task, Verdict};

#[derive(Debug, Parser)]
#[command(name = "chaining-lab", version, about = "l1-penalized M-estimation and empirical-process experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON experiment file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the one in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the one in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the penalized estimator on a simulated sparse regression.
    Solve(Common),
    /// Monte Carlo E_n against the regime bounds over a grid.
    Simulate(Common),
    /// Tail-bound, symmetrization and contraction checks.
    Check(Common),
    /// Dudley against the dual-norm bound on l1-hull surrogates.
    Chain(Common),
    /// End-to-end oracle inequality experiment.
    Oracle(Common),
    /// Scaling of E_n in n and p with fitted exponents.
    Scaling(Common),
}

impl Command {
    fn split(&self) -> (Task, &Common) {
        match self {
            Command::Solve(c) => (Task::Solve, c),
            Command::Simulate(c) => (Task::Simulate, c),
            Command::Check(c) => (Task::Check, c),
            Command::Chain(c) => (Task::Chain, c),
            Command::Oracle(c) => (Task::Oracle, c),
            Command::Scaling(c) => (Task::Scaling, c),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED_CHECK: i32 = 2;

/// Loads and validates the config, runs the task and writes artifacts.
pub fn execute(cli: &Cli) -> Result<Vec<Verdict>> {
    let (task, common) = cli.command.split();
    let (cfg, bytes) = ExperimentConfig::load(&common.config)?;
    cfg.validate()?;
    let seed = common
        .seed
        .or(cfg.seed)
        .ok_or_else(|| Error::config("seed", "a master seed is required (in the config or via --seed)"))?;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let writer = ArtifactWriter::new(&dir, &config_hash(&bytes), seed)?;
    let verdicts = run_task(task, &cfg, seed, &writer)?;
    writer.json("verdicts.json", &verdicts)?;
    Ok(verdicts)
}

/// Runs the parsed command line and maps the outcome to an exit code,
/// reporting to stdout and stderr.
pub fn main_with(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(verdicts) => {
            for v in &verdicts {
                println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            if verdicts.iter().all(|v| v.passed) {
                EXIT_OK
            } else {
                EXIT_FAILED_CHECK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Caps the global rayon pool from CHAINING_LAB_THREADS when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CHAINING_LAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::config("CHAINING_LAB_THREADS", format!("expected a positive integer, found {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config("CHAINING_LAB_THREADS", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_command_line() {
        let cli = Cli::try_parse_from(["chaining-lab", "chain", "--config", "c.json", "--seed", "5", "--out", "o"]).unwrap();
        let (task, common) = cli.command.split();
        assert_eq!(task, Task::Chain);
        assert_eq!(common.seed, Some(5));
        assert!(Cli::try_parse_from(["chaining-lab", "bogus", "--config", "c.json"]).is_err());
        assert!(Cli::try_parse_from(["chaining-lab", "solve"]).is_err());
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{}").unwrap();
        let cli = Cli::try_parse_from(["chaining-lab", "solve", "--config", path.to_str().unwrap()]).unwrap();
        assert!(matches!(execute(&cli), Err(Error::Config { .. })));
        assert_eq!(main_with(&cli), EXIT_ERROR);
    }
}
