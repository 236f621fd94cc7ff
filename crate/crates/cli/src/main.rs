//! Config-driven command line for planning and model-free learning in deep
//! structured teams. Log level comes from the RUST_LOG environment variable.

mod error;
mod output;
mod scenario;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::scenario::TaskKind;

#[derive(Parser)]
#[command(
    name = "deep-teams",
    version,
    about = "Planning and model-free learning for deep structured teams",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact deep-state value iteration (finite model)
    PlanDss(RunArgs),
    /// Quantized mean-field value iteration (finite model)
    PlanNs(RunArgs),
    /// Tabular Q-learning over deterministic local laws (finite model)
    Qlearn(RunArgs),
    /// Solve the deep Riccati equations and derive feedback gains (LQ model)
    Riccati(RunArgs),
    /// Zeroth-order policy gradient over the feedback gains (LQ model)
    Pg(RunArgs),
    /// Simulate one closed-loop trajectory
    Simulate(RunArgs),
    /// Monte-Carlo estimate of a strategy's objective
    Evaluate(RunArgs),
    /// Bundled experiments
    #[command(subcommand)]
    Example(ExampleCommand),
}

#[derive(Subcommand)]
enum ExampleCommand {
    /// Smart grid: Riccati reference plus model-free learning on bundled seeds
    SmartGrid(ExampleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,
    /// Replace the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the scenario's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override into the scenario, e.g. hyper.iters=100 (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ExampleArgs {
    /// Run a single seed instead of the bundled seed set
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the bundled output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override into the bundled scenario (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run_with_args(kind: TaskKind, args: &RunArgs) -> error::Result<Vec<PathBuf>> {
    let mut config = scenario::parse_scenario(&args.scenario, &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    tasks::run_task(kind, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::PlanDss(args) => run_with_args(TaskKind::PlanDss, args),
        Command::PlanNs(args) => run_with_args(TaskKind::PlanNs, args),
        Command::Qlearn(args) => run_with_args(TaskKind::Qlearn, args),
        Command::Riccati(args) => run_with_args(TaskKind::Riccati, args),
        Command::Pg(args) => run_with_args(TaskKind::Pg, args),
        Command::Simulate(args) => run_with_args(TaskKind::Simulate, args),
        Command::Evaluate(args) => run_with_args(TaskKind::Evaluate, args),
        Command::Example(ExampleCommand::SmartGrid(args)) => {
            tasks::run_smart_grid_example(&args.overrides, args.seed, args.out.clone())
        }
    };
    match result {
        Ok(paths) => {
            for path in paths {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
