//! Command-line front end: fits the mixture-of-graphs sampler, summarizes
//! traces, evaluates interventional contrasts, and runs the synthetic
//! benchmark protocol.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use dagmix::Error;

#[derive(Parser, Debug)]
#[command(
    name = "dagmix",
    version,
    about = "Clustering of categorical observations into groups sharing a directed acyclic graph model, with subject-level causal summaries"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the MCMC sampler on a categorical dataset
    Fit(commands::FitArgs),
    /// Turn a trace into similarity, partition, and per-subject graph files
    Summarize(commands::SummarizeArgs),
    /// Estimate subject-specific interventional contrasts from a trace
    Causal(commands::CausalArgs),
    /// Generate synthetic ground-truth replicates without fitting
    Simulate(commands::SimulateArgs),
    /// Fit competing model variants on synthetic data and score them
    Benchmark(commands::BenchmarkArgs),
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::TooLarge(_) => 3,
        Error::Invariant(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Fit(args) => commands::cmd_fit(args),
        Cmd::Summarize(args) => commands::cmd_summarize(args),
        Cmd::Causal(args) => commands::cmd_causal(args),
        Cmd::Simulate(args) => commands::cmd_simulate(args),
        Cmd::Benchmark(args) => commands::cmd_benchmark(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
