use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corn_cli::commands::{
    cmd_accountant, cmd_compare_traces, cmd_optimize_cov, cmd_run_experiment, cmd_simulate, cmd_verify_summary,
    AccountantArgs, CompareTracesArgs, OptimizeCovArgs, RunExperimentArgs, SimulateArgs, VerifySummaryArgs,
};

/// Correlated-noise private decentralized SGD: covariance design, privacy
/// accounting and simulation.
#[derive(Debug, Parser)]
#[command(name = "corn", version)]
struct Cli {
    /// Default output root.
    #[arg(long, global = true, env = "CORN_OUTPUT_DIR", default_value = "corn-output")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design a noise covariance and write R* plus a JSON summary.
    OptimizeCov(OptimizeCovArgs),
    /// Sweep epsilon, p or n and compare Tr(W R Wᵀ) across structures.
    CompareTraces(CompareTracesArgs),
    /// Run every cell of an experiment config.
    RunExperiment(RunExperimentArgs),
    /// Check a covariance CSV against a privacy budget (exit 3 on FAIL).
    Accountant(AccountantArgs),
    /// Run one cell of an experiment config and emit its trajectory CSV.
    Simulate(SimulateArgs),
    /// Recompute a run directory's summary from its per-run CSVs.
    VerifySummary(VerifySummaryArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::OptimizeCov(a) => cmd_optimize_cov(a, &cli.output_root),
        Command::CompareTraces(a) => cmd_compare_traces(a, &cli.output_root),
        Command::RunExperiment(a) => cmd_run_experiment(a, &cli.output_root),
        Command::Accountant(a) => cmd_accountant(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::VerifySummary(a) => cmd_verify_summary(a),
    };
    result.unwrap_or_else(|e| {
        // a closed downstream pipe (`corn simulate ... | head`) is not an error
        let broken_pipe = e
            .chain()
            .any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe));
        if broken_pipe {
            return ExitCode::SUCCESS;
        }
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
