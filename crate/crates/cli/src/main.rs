//! `longrun`: batch driver for the simulator, the boost experiment, the
//! three-tree learner and deployment.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "longrun", version, about = "Long-run user value ranking experiments")]
pub struct Cli {
    /// JSON config for the subcommand (scenario, pipeline, params or compare).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run seeds `seed..seed+replicas`, each into `out/seed-<n>`.
    #[arg(long, global = true, default_value_t = 1)]
    pub replicas: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exhaustive optimum versus myopic ranking on a tiny threshold-mode world.
    Oracle(OracleArgs),
    /// Play one policy on a scenario file and export the engagement log.
    Simulate,
    /// Synthetic population, assignment and boost experiment.
    Experiment,
    /// Fit the three-tree uplift model on an experiment CSV.
    Train(TrainArgs),
    /// High/low split of evaluation rows by predicted uplift.
    Evaluate(EvaluateArgs),
    /// Publish a score table with holdout producers at the mean score.
    Deploy(DeployArgs),
    /// Every stage end to end, with a manifest.
    Pipeline,
    /// Two policies on one world: discounted value and goal metric.
    Compare,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Reach {
    Followers,
    RecentEngagers,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// Built-in two-viewer, two-producer world instead of `--config`.
    #[arg(long, num_args = 3, value_names = ["V1", "V2", "BETA"])]
    pub two_period: Option<Vec<f64>>,
    /// Who receives producer 2's second-period post in the built-in world.
    #[arg(long, value_enum, default_value = "followers")]
    pub reach: Reach,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment CSV (`producer_id,treated,outcome,<features>[,split]`).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 80.0)]
    pub cutoff: f64,
}

#[derive(Args, Debug)]
pub struct DeployArgs {
    /// `producer_id,label` as written by `experiment`.
    #[arg(long)]
    pub assignment: PathBuf,
    /// Precomputed `producer_id,score` file.
    #[arg(long, conflicts_with = "model")]
    pub scores: Option<PathBuf>,
    /// Score every producer in `--population` with this model.
    #[arg(long, requires = "population")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub version: u32,
}

/// Bad input the user can fix: exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
