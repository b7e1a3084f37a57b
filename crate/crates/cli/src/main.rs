use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use multidex::rerank::FusionMode;
use multidex_cli::{Pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "multidex", version, about = "Multi-index generative retrieval pipeline")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set rqvae.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fusion mode: full, ceid-only, seid-only, conf-only or cons-only.
    #[arg(long, global = true)]
    mode: Option<FusionMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate interactions, filter, and split.
    Prepare {
        /// Generate a seeded synthetic dataset instead of reading files.
        #[arg(long)]
        synthetic: bool,
    },
    /// Train collaborative item embeddings on the train split.
    EmbedCollab,
    /// Train both quantizers and write collision-free code tables.
    BuildIndex,
    /// Train one scorer per index type and template.
    TrainScorers,
    /// Beam-search top-K lists for every user, template and index type.
    Retrieve,
    /// Fuse the lists of each user.
    Rerank,
    /// Hit@K and NDCG@K for the fused lists and every ablation.
    Evaluate,
    /// PER matrices and complementary hit ratios.
    Analyze,
    /// Fused accuracy as the number of templates grows.
    Sweep,
    /// Every stage in order.
    All {
        #[arg(long)]
        synthetic: bool,
    },
}

fn run(cli: Cli) -> Result<Vec<String>> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(mode) = cli.mode {
        cfg.set("rerank.mode", mode.as_str())?;
    }
    if let Command::Prepare { synthetic: true } | Command::All { synthetic: true } = cli.command {
        cfg.set("data.synthetic", "true")?;
    }
    let mut pipeline = Pipeline::new(cfg)?;
    match cli.command {
        Command::All { .. } => pipeline.run_all()?,
        Command::Prepare { .. } => pipeline.run(Stage::Prepare)?,
        Command::EmbedCollab => pipeline.run(Stage::EmbedCollab)?,
        Command::BuildIndex => pipeline.run(Stage::BuildIndex)?,
        Command::TrainScorers => pipeline.run(Stage::TrainScorers)?,
        Command::Retrieve => pipeline.run(Stage::Retrieve)?,
        Command::Rerank => pipeline.run(Stage::Rerank)?,
        Command::Evaluate => pipeline.run(Stage::Evaluate)?,
        Command::Analyze => pipeline.run(Stage::Analyze)?,
        Command::Sweep => pipeline.run(Stage::Sweep)?,
    }
    Ok(pipeline.take_notes())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(notes) => {
            for n in notes {
                eprintln!("{n}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
