use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigValues;

#[derive(Debug, Parser)]
#[command(name = "nirm", version, about = "Fit and extend network item response models")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write an artifact directory.
    Fit(FitArgs),
    /// Place new persons or items in a fitted space.
    #[command(subcommand)]
    Extend(ExtendCommand),
    /// Re-summarize saved draws and rewrite the tables and plots.
    Export(ExportArgs),
    /// Generate synthetic responses from a latent-distance model.
    Simulate(SimulateArgs),
    /// Response-pattern and pair concordance counts for a few items.
    Counts(CountsArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunFlags,

    /// Config file (flat TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub overwrite: bool,
}

/// Flags that map one-to-one onto config keys.
#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// Response CSV (header row of item ids, first column person ids).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory [default: $NIRM_OUTPUT_ROOT/<data stem>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// prod (positive-concordant) or concord (all-concordant).
    #[arg(long)]
    pub encoding: Option<String>,
    /// item-from-person or person-from-item.
    #[arg(long)]
    pub linkage: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// s1 or s2.
    #[arg(long)]
    pub metric: Option<String>,
    /// Minimum similarity drawn in network.svg.
    #[arg(long)]
    pub display_threshold: Option<f64>,
    #[arg(long)]
    pub missing_token: Option<String>,
    /// The data has no person id column.
    #[arg(long)]
    pub no_person_ids: bool,
}

impl RunFlags {
    pub fn to_values(&self) -> ConfigValues {
        ConfigValues {
            data: self.data.clone(),
            out: self.out.clone(),
            seed: self.seed,
            dim: self.dim,
            encoding: self.encoding.clone(),
            linkage: self.linkage.clone(),
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            workers: self.workers,
            metric: self.metric.clone(),
            display_threshold: self.display_threshold,
            missing_token: self.missing_token.clone(),
            person_id_column: self.no_person_ids.then_some(false),
            ..ConfigValues::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum ExtendCommand {
    /// Estimate new persons on the fitted items.
    Score(ScoreArgs),
    /// Place new items (for fitted persons, or together with new persons).
    Link(LinkArgs),
}

/// Sampler settings for extension runs; unset values come from the fit.
#[derive(Debug, Default, Args)]
pub struct SamplerFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtendCommon {
    /// Artifact directory written by `nirm fit`.
    #[arg(long)]
    pub artifact: PathBuf,
    /// New response CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Original data; must hash to the value in the manifest [default: the
    /// copy stored in the artifact].
    #[arg(long)]
    pub original: Option<PathBuf>,
    /// Output directory [default: a new subdirectory of the artifact].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub missing_token: Option<String>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: ExtendCommon,
    /// Closed-form estimates only; no sampling.
    #[arg(long)]
    pub approx_only: bool,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[command(flatten)]
    pub common: ExtendCommon,
    /// place-only or partial-update.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Output directory [default: <artifact>/export].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub display_threshold: Option<f64>,
    #[arg(long)]
    pub layout_seed: Option<u64>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub persons: usize,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub beta_mean: f64,
    #[arg(long, default_value_t = 1.5)]
    pub beta_sd: f64,
    /// Also write the generating parameters as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct CountsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated item ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub items: Vec<String>,
    #[arg(long, default_value_t = nirm::data::DEFAULT_CONTINGENCY_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub missing_token: Option<String>,
    #[arg(long)]
    pub no_person_ids: bool,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
