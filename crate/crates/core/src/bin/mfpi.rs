use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfpi_deeponet::experiment::{
    resolve_output_root, ExperimentConfig, Run, TrainTarget, OUTPUT_ROOT_ENV,
};

#[derive(Parser)]
#[command(
    name = "mfpi",
    version,
    about = "Physics-informed DeepONet experiments on benchmark ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run stages that already completed.
    #[arg(long, global = true)]
    force: bool,
    /// Replaces the data, surrogate and operator seeds.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output root; run directories are created below it.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Simulate,
    Dataset,
    Train {
        #[arg(value_enum)]
        model: Model,
    },
    Evaluate,
    Plot,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Surrogate,
    Operator,
    Baseline,
}

fn run(cli: Cli) -> mfpi_deeponet::Result<()> {
    let path = cli
        .config
        .ok_or_else(|| mfpi_deeponet::Error::Config("--config PATH is required".into()))?;
    let mut config = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed_override {
        config.override_seed(seed);
    }
    let root = resolve_output_root(cli.output.as_deref(), &config);
    let mut run = Run::open(config, &root, cli.force)?;
    eprintln!("run directory: {}", run.dir.display());
    match cli.command {
        Command::Simulate => run.simulate().map(drop),
        Command::Dataset => run.dataset().map(drop),
        Command::Train { model } => run
            .train(match model {
                Model::Surrogate => TrainTarget::Surrogate,
                Model::Operator => TrainTarget::Operator,
                Model::Baseline => TrainTarget::Baseline,
            })
            .map(drop),
        Command::Evaluate => run.evaluate().map(drop),
        Command::Plot => run.plot().map(drop),
        Command::All => run.all(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
