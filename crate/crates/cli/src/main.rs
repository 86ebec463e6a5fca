use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diadem_cli::{
    cmd_evaluate, cmd_report_alpha, cmd_synth, cmd_train, CliError, ConfigError, RunConfig,
    SynthArgs, CHECKPOINT_FILE,
};

#[derive(Parser, Debug)]
#[command(
    name = "diadem",
    version,
    about = "Demographic-aware annotator disagreement model"
)]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint.bin, train.jsonl and the resolved config.
    Train,
    /// Evaluate a checkpoint on the configured test view.
    Evaluate {
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print learned demographic weights, largest first.
    ReportAlpha {
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with a planted demographic effect.
    Synth(SynthFlags),
}

#[derive(Args, Debug)]
struct SynthFlags {
    #[arg(long, default_value_t = 20)]
    items: usize,
    #[arg(long, default_value_t = 10)]
    annotators: usize,
    #[arg(long, default_value_t = 3)]
    axes: usize,
    #[arg(long, default_value_t = 2)]
    categories: usize,
    #[arg(long, default_value_t = 0)]
    planted_axis: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Raters per item, mixed around a dominant planted category.
    #[arg(long)]
    annotators_per_item: Option<usize>,
}

fn run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| {
        CliError::Config(ConfigError::Field {
            path: "--config".into(),
            message: "required for this command".into(),
        })
    })?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn default_out(cli: &Cli) -> Result<PathBuf, CliError> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    match &cli.config {
        Some(_) => Ok(run_config(cli)?.out),
        None => Ok(PathBuf::from(".")),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train => {
            let config = run_config(cli)?;
            let report = cmd_train(&config)?;
            if let Some(last) = report.epochs.last() {
                println!("epoch {} total loss {:.6}", last.epoch, last.losses.total);
            }
            println!("wrote {}", config.out.display());
        }
        Command::Evaluate { checkpoint } => {
            let config = run_config(cli)?;
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| config.out.join(CHECKPOINT_FILE));
            let report = cmd_evaluate(&config, &ckpt)?;
            print!("{}", report.to_table());
        }
        Command::ReportAlpha { checkpoint } => {
            let out = default_out(cli)?;
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let (_, table) = cmd_report_alpha(&ckpt, &out)?;
            print!("{table}");
        }
        Command::Synth(f) => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| Path::new(".").to_path_buf());
            let args = SynthArgs {
                n_items: f.items,
                n_annotators: f.annotators,
                n_axes: f.axes,
                categories_per_axis: f.categories,
                planted_axis: f.planted_axis,
                noise: f.noise,
                num_classes: f.classes,
                feature_dim: f.dim,
                annotators_per_item: f.annotators_per_item,
            };
            let corpus = cmd_synth(&args, cli.seed.unwrap_or(0), &out)?;
            println!(
                "wrote {} items, {} annotators, {} annotations to {}",
                corpus.items().len(),
                corpus.annotators().len(),
                corpus.annotations().len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
