//! Command-line front end for the grasp data, training and evaluation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pgrasp_core::harness::pipeline;
use pgrasp_core::harness::Config;
use pgrasp_core::models::GdnVariant;
use pgrasp_core::Error;

#[derive(Parser)]
#[command(name = "pgrasp", version, about = "Parallel-jaw grasp data generation, model training and variance-aware planning")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Derive every seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the part corpus.
    GenParts,
    /// Simulate and render grasps on the selected parts into a dataset file.
    Collect,
    /// Compute per-part statistics and retain parts within the success and size bands.
    Filter,
    /// Split retained parts object-wise into training and validation sets.
    Split,
    /// Train the grasp quality network.
    TrainGqn,
    /// Train one grasp displacement network.
    TrainGdn {
        /// OCFI-M, OCFI-M+V, GCIP-M or GCIP-M+V.
        #[arg(long)]
        variant: GdnVariant,
    },
    /// Experiment (1): grasps chosen by predicted quality alone.
    EvalExp1,
    /// Experiment (2): grasps chosen by quality, then lowest predicted variance.
    EvalExp2,
    /// Plan one grasp on a validation part.
    Plan {
        #[arg(long)]
        part: Option<u64>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Variance model for precise planning; quality only when absent.
        #[arg(long)]
        variant: Option<GdnVariant>,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.reseed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    if let Command::Gradcheck { seeds } = cli.command {
        let (worst, text) = pipeline::gradcheck(seeds)?;
        print!("{text}");
        println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
        return Ok(worst < GRADCHECK_TOLERANCE);
    }
    let cfg = config(cli)?;
    let msg = match &cli.command {
        Command::GenParts => pipeline::gen_parts(&cfg)?,
        Command::Collect => pipeline::collect_dataset(&cfg)?,
        Command::Filter => pipeline::filter(&cfg)?,
        Command::Split => pipeline::split(&cfg)?,
        Command::TrainGqn => pipeline::train_gqn_stage(&cfg)?,
        Command::TrainGdn { variant } => pipeline::train_gdn_stage(&cfg, *variant)?,
        Command::EvalExp1 => pipeline::eval_exp1(&cfg)?,
        Command::EvalExp2 => pipeline::eval_exp2(&cfg)?,
        Command::Plan { part, trial, variant } => pipeline::plan(&cfg, *part, *trial, *variant)?,
        Command::Gradcheck { .. } => unreachable!("handled above"),
    };
    println!("{}", msg.trim_end());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::UnknownConfigKey { .. }) => {
            eprintln!("pgrasp: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("pgrasp: {e}");
            ExitCode::FAILURE
        }
    }
}
