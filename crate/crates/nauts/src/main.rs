//! Command-line interface: generate training data, train the
//! per-policy predictors, run negotiated episode batches, and export
//! plot-ready weight-importance series.
//!
//! Flag resolution: built-in default < command-line flag < config
//! file. A `--config` YAML file, when given, overrides any flag it
//! sets; flags cover everything for config-free use.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or
//! file-format error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use nauts::commands::{
    cmd_gen_data, cmd_plot_data, cmd_run, cmd_train, ConfigFile, ControllerMode, ExperimentConfig,
    GenDataConfig, TrainConfig,
};
use nauts::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nauts",
    version,
    about = "Blended-policy navigation testbed: generate data, train predictors, \
             run negotiated trials, export plot data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out each base policy on a scenario and write a training dataset
    GenData(GenDataArgs),
    /// Fit one behavior predictor per policy from a dataset
    Train(TrainArgs),
    /// Run seeded episode trials and write traces plus a metrics table
    Run(RunArgs),
    /// Convert run traces into per-policy importance time series
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scenario YAML file to roll out on
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Episodes per policy
    #[arg(long)]
    episodes: Option<usize>,
    /// Prediction horizon T in steps
    #[arg(long)]
    horizon: Option<usize>,
    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset file
    #[arg(long)]
    out: Option<PathBuf>,
    /// YAML experiment file whose fields override these flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by gen-data
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Weight of the command-likelihood loss term
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the goal-displacement loss term
    #[arg(long)]
    lambda2: Option<f64>,
    /// Optimizer iterations per policy
    #[arg(long)]
    iters: Option<usize>,
    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for model files and the loss curve
    #[arg(long)]
    out: Option<PathBuf>,
    /// YAML experiment file whose fields override these flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario YAML file to run on
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Number of seeded trials
    #[arg(long)]
    trials: Option<usize>,
    /// Master random seed (trial seeds derive from it)
    #[arg(long)]
    seed: Option<u64>,
    /// Controller: nauts, uniform_blend, or single_policy(<policy>)
    #[arg(long)]
    mode: Option<String>,
    /// Weight of the command-likelihood loss term
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the goal-displacement loss term
    #[arg(long)]
    lambda2: Option<f64>,
    /// Weight of the regret-matching negotiation term
    #[arg(long)]
    lambda3: Option<f64>,
    /// Weight of the exploration-norm regularizer
    #[arg(long)]
    lambda4: Option<f64>,
    /// Prediction horizon T in steps
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory for traces and metrics
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding trained model files
    #[arg(long)]
    models: Option<PathBuf>,
    /// YAML experiment file whose fields override these flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Trace CSV files produced by run
    traces: Vec<PathBuf>,
    /// Output CSV file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// YAML experiment file whose fields override these flags
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Loads the config file when given; `None` means "nothing overrides".
fn load_config(path: &Option<PathBuf>) -> Result<Option<ConfigFile>> {
    match path {
        Some(p) => ConfigFile::load(p).map(Some),
        None => Ok(None),
    }
}

/// Resolution helper: config-file field beats flag beats default.
fn resolve<T: Clone>(config_value: &Option<T>, flag: Option<T>, default: T) -> T {
    config_value.clone().or(flag).unwrap_or(default)
}

/// Like [`resolve`] but with no default: the value must come from the
/// config file or a flag.
fn resolve_required<T: Clone>(
    config_value: &Option<T>,
    flag: Option<T>,
    what: &str,
) -> Result<T> {
    config_value.clone().or(flag).ok_or_else(|| {
        Error::InvalidArgument(format!("missing {what}: pass --{what} or set it in --config"))
    })
}

fn run_gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = load_config(&args.config)?.unwrap_or_else(empty_config);
    let resolved = GenDataConfig {
        scenario: resolve_required(&cfg.scenario, args.scenario, "scenario")?,
        episodes: resolve(&cfg.episodes, args.episodes, 1),
        horizon: resolve(&cfg.horizon, args.horizon, 9),
        seed: resolve(&cfg.seed, args.seed, 0),
        out: resolve(&cfg.out, args.out, PathBuf::from("dataset.json")),
    };
    let summary = cmd_gen_data(&resolved)?;
    for (policy, count) in &summary.per_policy {
        println!("{}: {} samples", policy.name(), count);
    }
    println!(
        "wrote {} samples across {} policies to {}",
        summary.total,
        summary.per_policy.len(),
        summary.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?.unwrap_or_else(empty_config);
    let resolved = TrainConfig {
        dataset: resolve(&cfg.dataset, args.dataset, PathBuf::from("dataset.json")),
        out: resolve(&cfg.out, args.out, PathBuf::from("models")),
        lambda1: resolve(&cfg.lambda1, args.lambda1, 0.1),
        lambda2: resolve(&cfg.lambda2, args.lambda2, 10.0),
        iterations: resolve(&cfg.iterations, args.iters, 2500),
        seed: resolve(&cfg.seed, args.seed, 0),
    };
    let summary = cmd_train(&resolved)?;
    for (policy, path, initial, final_loss) in &summary.models {
        println!(
            "{}: loss {initial:.4} -> {final_loss:.4} ({})",
            policy.name(),
            path.display()
        );
    }
    println!("loss curve: {}", summary.loss_curve.display());
    Ok(())
}

fn run_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?.unwrap_or_else(empty_config);
    let defaults = ExperimentConfig::default();
    let mode_text = resolve(&cfg.mode, args.mode, defaults.mode.to_string());
    let resolved = ExperimentConfig {
        scenario: resolve_required(&cfg.scenario, args.scenario, "scenario")?,
        lambda1: resolve(&cfg.lambda1, args.lambda1, defaults.lambda1),
        lambda2: resolve(&cfg.lambda2, args.lambda2, defaults.lambda2),
        lambda3: resolve(&cfg.lambda3, args.lambda3, defaults.lambda3),
        lambda4: resolve(&cfg.lambda4, args.lambda4, defaults.lambda4),
        horizon: resolve(&cfg.horizon, args.horizon, defaults.horizon),
        trials: resolve(&cfg.trials, args.trials, defaults.trials),
        seed: resolve(&cfg.seed, args.seed, defaults.seed),
        mode: ControllerMode::parse(&mode_text)?,
        out: resolve(&cfg.out, args.out, defaults.out),
        models: resolve(&cfg.models, args.models, defaults.models),
    };
    let summary = cmd_run(&resolved)?;
    print!("{}", summary.table);
    println!("wrote traces and metrics to {}", summary.out_dir.display());
    Ok(())
}

fn run_plot_data(args: PlotDataArgs) -> Result<()> {
    let cfg = load_config(&args.config)?.unwrap_or_else(empty_config);
    let out = cfg.out.clone().or(args.out);
    let csv = cmd_plot_data(&args.traces, out.as_deref())?;
    match out {
        Some(path) => println!("wrote importance series to {}", path.display()),
        None => print!("{csv}"),
    }
    Ok(())
}

/// A config file that sets nothing, for when `--config` is absent.
fn empty_config() -> ConfigFile {
    ConfigFile {
        version: 1,
        scenario: None,
        trials: None,
        seed: None,
        mode: None,
        lambda1: None,
        lambda2: None,
        lambda3: None,
        lambda4: None,
        horizon: None,
        out: None,
        episodes: None,
        iterations: None,
        dataset: None,
        models: None,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; anything
            // else is a usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Run(args) => run_run(args),
        Command::PlotData(args) => run_plot_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
