mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "bcgan", version, about = "Conditional tabular GANs with classifier-boundary calibration")]
struct Cli {
    /// TOML experiment file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each subcommand writes into its own directory below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// wgan_gp, mmd_gan or acgan.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long = "lambda-bc", global = true)]
    lambda_bc: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the frozen classifier set, each on a random half of the data.
    Pretrain,
    /// Train a conditional GAN.
    TrainGan,
    /// Sample synthetic rows from a trained GAN.
    Generate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Keep soft one-hot outputs instead of snapping them to a category.
        #[arg(long)]
        no_harden: bool,
    },
    /// Compare classifiers trained on real and on synthetic data.
    Evaluate {
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Real vs ACGAN vs WGAN vs calibrated WGAN on a 2-D task.
    ToyDemo,
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let variant = cli
        .variant
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(|e: bcgan::Error| CliError::new("argument", e.to_string()))?;
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        variant,
        lambda_bc: cli.lambda_bc,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Pretrain => commands::pretrain(&cfg),
        Command::TrainGan => commands::train_gan(&cfg),
        Command::Generate {
            n,
            checkpoint,
            no_harden,
        } => commands::generate(
            &cfg,
            n,
            checkpoint.as_deref(),
            cfg.evaluation.harden_one_hot && !no_harden,
        ),
        Command::Evaluate { synthetic } => commands::evaluate(&cfg, synthetic.as_deref()),
        Command::ToyDemo => commands::toy_demo(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BCGAN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
