//! Command-line orchestration of the super-segment, autoencoder and UMAP
//! pipeline. All commands share one working directory (`--out`) with fixed
//! file names, so each stage picks up the previous stage's outputs.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Core(#[from] icetopo::Error),
    #[error(transparent)]
    Umap(#[from] icetopo_umap::UmapError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(icetopo::Error::Config(_)) | CliError::Umap(icetopo_umap::UmapError::Config(_)) => 2,
            CliError::MissingInput(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "icetopo", version, about = "Sea-ice topographic embeddings: super-segments, autoencoders, UMAP")]
pub struct Cli {
    /// TOML config; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every stage seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Working directory for all inputs and outputs.
    #[arg(long, global = true, default_value = "icetopo-run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its regime labels.
    Synth,
    /// Read tracks (config `data.tracks`, else the synthetic corpus) and
    /// normalize background rates per track.
    Ingest,
    /// Split track ids into train / validation / test.
    Split,
    /// Build interpolated 11-point windows for every split.
    Supersegment,
    /// Train autoencoders.
    Train {
        /// lstm or cnn; defaults to every architecture in `model.archs`.
        #[arg(long)]
        arch: Option<String>,
    },
    /// Write 16-d embeddings of the UMAP sample of training windows.
    Embed {
        #[arg(long)]
        arch: Option<String>,
    },
    /// Project raw windows or embeddings to 2-D.
    Umap {
        /// `raw` or `embedding:<arch>`.
        #[arg(long, default_value = "raw")]
        input: String,
    },
    /// Reconstruction metrics, density grids, histograms and compactness.
    Metrics,
    /// Render every available layout to SVG.
    Plot,
    /// Every stage in order, plus a run manifest.
    Pipeline,
}

pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ws = commands::Workspace::new(&cli.out)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg, &ws),
        Command::Ingest => commands::ingest(&cfg, &ws),
        Command::Split => commands::split(&cfg, &ws),
        Command::Supersegment => commands::supersegment(&cfg, &ws),
        Command::Train { arch } => {
            for a in commands::archs(&cfg, arch.as_deref())? {
                commands::train(&cfg, &ws, a)?;
            }
            Ok(())
        }
        Command::Embed { arch } => {
            for a in commands::archs(&cfg, arch.as_deref())? {
                commands::embed(&cfg, &ws, a)?;
            }
            Ok(())
        }
        Command::Umap { input } => commands::umap(&cfg, &ws, &input.parse()?),
        Command::Metrics => commands::metrics(&cfg, &ws),
        Command::Plot => commands::plot(&cfg, &ws),
        Command::Pipeline => {
            for (stage, t) in commands::pipeline(&cfg, &ws, cli.seed)? {
                log::debug!("{stage}: {:.1} s", t.as_secs_f64());
            }
            Ok(())
        }
    }
}
