//! `uniscale` command surface: synthetic data, training, evaluation,
//! ablation, gradient checks, inference and plotting.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, ExitKind};

const ENV_HELP: &str = "Every config key KEY can also be set with the environment variable UNISCALE_<KEY> \
(upper case). Precedence: defaults < --config file < environment < flags. \
Config files are flat JSON objects whose keys are the flag names with '-' replaced by '_'.";

#[derive(Debug, Parser)]
#[command(name = "uniscale", version, about = "Metric-scale multi-view reconstruction toolkit", after_help = ENV_HELP)]
pub struct Cli {
    /// JSON file with configuration keys for the chosen command.
    #[arg(long, global = true, env = "UNISCALE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for scene generation and evaluation (0 = all cores).
    #[arg(long, global = true, env = "UNISCALE_JOBS", default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    #[command(after_help = ENV_HELP)]
    Synth(commands::synth::SynthArgs),
    /// Train a model on the train split; resumable from a checkpoint.
    #[command(after_help = ENV_HELP)]
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint in metric or median-aligned mode.
    #[command(after_help = ENV_HELP)]
    Eval(commands::eval::EvalArgs),
    /// Train and compare model variants under identical seeds.
    #[command(after_help = ENV_HELP)]
    Ablate(commands::ablate::AblateArgs),
    /// Finite-difference checks of every op and of the micro model.
    #[command(after_help = ENV_HELP)]
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Predict depth, points, cameras and scale for a scene or images.
    #[command(after_help = ENV_HELP)]
    Infer(commands::infer::InferArgs),
    /// Render rel/tau against view-count curves to SVG.
    #[command(after_help = ENV_HELP)]
    Plot(commands::plot::PlotArgs),
}

/// Runs a parsed command line with `env` as the environment.
pub fn run_with_env(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> CliResult<()> {
    if cli.jobs > 0 {
        // The global pool can be built once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Synth(a) => commands::synth::run(&config::resolve(file, env, a)?),
        Command::Train(a) => commands::train::run(&config::resolve(file, env, a)?),
        Command::Eval(a) => commands::eval::run(&config::resolve(file, env, a)?),
        Command::Ablate(a) => commands::ablate::run(&config::resolve(file, env, a)?),
        Command::Gradcheck(a) => commands::gradcheck::run(&config::resolve(file, env, a)?),
        Command::Infer(a) => commands::infer::run(&config::resolve(file, env, a)?),
        Command::Plot(a) => commands::plot::run(&config::resolve(file, env, a)?),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    run_with_env(cli, &config::process_env)
}

/// Parses `args` (program name first) and runs the command; clap usage
/// errors map to the configuration exit code.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(cli)
}
