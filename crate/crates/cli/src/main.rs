//! `radnas`: range-Doppler detector pipeline driver. Stages communicate
//! through files under the output root and are safe to rerun; see the
//! configs/ profiles for complete configurations.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use radnas_cli::config::PipelineConfig;
use radnas_cli::stages::{self, StageCtx};

#[derive(Parser)]
#[command(name = "radnas", version, about = "Range-Doppler detector search pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Pipeline configuration file (TOML).
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Rerun the stage even when its artifacts already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Dotted-path config override, repeatable: --set search.population=8
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic RD dataset under the output root.
    Synth,
    /// Convert raw ADC captures into RD maps.
    Preprocess,
    /// Train the weight-sharing supernet.
    TrainSupernet,
    /// Evolutionary architecture search over the trained supernet.
    Search,
    /// Retrain the top searched genes from scratch and keep the best.
    RetrainTop,
    /// Evaluate the best retrained model on the configured split.
    Eval,
    /// Aggregate stage outputs into report.csv.
    Report,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let config_path = cli
        .config
        .ok_or_else(|| anyhow!("--config is required (see configs/desk.cfg)"))?;
    let (config, config_text) = PipelineConfig::load(&config_path, &cli.set)?;
    config.validate()?;
    let out = config.resolved_out_dir();
    fs::create_dir_all(&out)
        .map_err(|e| anyhow!("cannot create output root {}: {e}", out.display()))?;
    let ctx = StageCtx { config: &config, config_text: &config_text, out, force: cli.force };
    match cli.command {
        Cmd::Synth => stages::synth::run(&ctx),
        Cmd::Preprocess => stages::preprocess::run(&ctx),
        Cmd::TrainSupernet => stages::train_supernet::run(&ctx),
        Cmd::Search => stages::search::run(&ctx),
        Cmd::RetrainTop => stages::retrain_top::run(&ctx),
        Cmd::Eval => stages::eval_cmd::run(&ctx),
        Cmd::Report => stages::report::run(&ctx),
    }
}
