//! `oodg`: post-hoc OOD scoring, nuisance-subspace analysis and
//! counterfactual benchmark construction from feature dumps.

mod common;
mod counterfactual;
mod eval;
mod report;
mod subspace;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "oodg",
    version,
    about = "Evaluate post-hoc OOD detectors on feature dumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score test dumps with every requested detector and write result tables
    Eval(eval::EvalArgs),
    /// Fit the nuisance subspace and compare detection before and after removing it
    Subspace(subspace::SubspaceArgs),
    /// Remove a fitted nuisance subspace from a dump
    Project(subspace::ProjectArgs),
    /// Build counterfactual images
    Counterfactual(counterfactual::CounterfactualArgs),
    /// Generate synthetic anisotropic benchmarks
    Synth(synth::SynthArgs),
    /// Rebuild summaries from an existing results.csv
    Report(report::ReportArgs),
}

fn init_threads() {
    let Ok(v) = std::env::var("OODG_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring OODG_THREADS={v}: expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval::run(a),
        Command::Subspace(a) => subspace::run(a),
        Command::Project(a) => subspace::run_project(a),
        Command::Counterfactual(a) => counterfactual::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
