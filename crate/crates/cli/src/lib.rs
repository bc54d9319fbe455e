//! `lightfx`: data generation, decoupling, triplet construction, transfer
//! training, inference and evaluation driven by one TOML config.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lightfx_core::imagecore::LightTransform;

pub use commands::{EvalReport, InferArgs};
pub use config::RunConfig;
pub use error::CliError;
pub use layout::Layout;

#[derive(Debug, Parser)]
#[command(name = "lightfx", version, about = "Reference-guided light-effect transfer")]
pub struct Cli {
    /// Run configuration.
    #[arg(long, global = true, default_value = "lightfx.toml")]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set removal.iterations=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic scene and light corpus.
    GenData,
    /// Train the light removal and light extraction models.
    TrainDecouple,
    /// Train the embedder and build the filtered triplet dataset.
    BuildTriplets,
    /// Pretrain the base model and run both transfer training stages.
    TrainTranslight,
    /// Transfer a light image onto a content image.
    Infer(InferCmd),
    /// Score decoupling, triplet filtering and transfer; writes eval/report.json.
    Evaluate,
    /// Print the evaluation report and plot loss curves.
    Report,
}

#[derive(Debug, clap::Args)]
pub struct InferCmd {
    /// Bundle directory; defaults to the full model of the configured run.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub light: PathBuf,
    /// Foreground mask; the light is suppressed inside it.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub dx: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub dy: i64,
    #[arg(long)]
    pub hflip: bool,
    #[arg(long)]
    pub vflip: bool,
    /// Counter-clockwise quarter turns.
    #[arg(long, default_value_t = 0)]
    pub turns: u8,
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    #[arg(long, default_value_t = lightfx_core::translight::DEFAULT_SAMPLING_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let load = || RunConfig::load(&cli.config, &cli.overrides);
    match &cli.command {
        Command::GenData => commands::gen_data(&load()?),
        Command::TrainDecouple => commands::train_decouple(&load()?),
        Command::BuildTriplets => commands::build_triplets(&load()?),
        Command::TrainTranslight => commands::train_translight(&load()?),
        Command::Evaluate => commands::evaluate(&load()?).map(|_| ()),
        Command::Report => commands::report(&load()?),
        Command::Infer(a) => {
            let bundle = match &a.bundle {
                Some(b) => b.clone(),
                None => Layout::new(&load()?.out_dir).full_bundle(),
            };
            if a.steps == 0 {
                return Err(CliError::Config("--steps must be positive".into()));
            }
            let transform =
                LightTransform { dx: a.dx, dy: a.dy, hflip: a.hflip, vflip: a.vflip, quarter_turns: a.turns, intensity: a.intensity };
            commands::infer(&InferArgs {
                bundle,
                content: a.content.clone(),
                light: a.light.clone(),
                mask: a.mask.clone(),
                transform,
                steps: a.steps,
                seed: a.seed,
                out: a.out.clone(),
            })
        }
    }
}
