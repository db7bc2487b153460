//! Library surface of the `sgc` command-line tool; the binary is a thin
//! wrapper so integration tests can run every command in-process.

pub mod commands;
pub mod manifest;

pub use commands::{
    cluster_inspect_report, evaluate_run, run_cluster_inspect, run_evaluate, run_generate,
    run_train, summary_report, ClusterInspectArgs, EvalReport, EvaluateArgs, GenerateArgs,
    TrainArgs,
};
pub use manifest::{dataset_fingerprint, RunManifest};

use clap::{Parser, Subcommand};

/// Graph classification on daily travel graphs: synthetic data generation,
/// model training over the 11-architecture matrix, evaluation against the
/// majority baseline, and spatial-cluster inspection.
#[derive(Parser)]
#[command(name = "sgc", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (four CSV/text files plus sidecar)
    Generate(GenerateArgs),
    /// Train one model and write metrics, parameters, and a run manifest
    Train(TrainArgs),
    /// Evaluate a finished run against the majority baseline
    Evaluate(EvaluateArgs),
    /// Inspect the spectral clustering of the station KNN graph
    ClusterInspect(ClusterInspectArgs),
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(args) => run_generate(&args),
        Command::Train(args) => run_train(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::ClusterInspect(args) => run_cluster_inspect(&args),
    }
}
