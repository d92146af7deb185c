//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "complat", version, about = "Collaborative/semantic complementarity workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load interactions, k-core filter, split, write a dataset bundle.
    Ingest(IngestArgs),
    /// Generate synthetic shared-plus-private worlds as dataset bundles.
    Synth(SynthArgs),
    /// Train the graph collaborative model.
    TrainCf(TrainArgs),
    /// Train the semantic projection model.
    TrainSem(TrainArgs),
    /// Train the fused two-branch model.
    TrainFusion(TrainArgs),
    /// Fit semantic-to-collaborative mappings and score the alignment.
    Probe(ProbeArgs),
    /// Compare two (or three) models' top-K lists.
    Diagnose(DiagnoseArgs),
    /// Consolidate the artifacts under a run directory into one report.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::TrainCf(_) => "train-cf",
            Command::TrainSem(_) => "train-sem",
            Command::TrainFusion(_) => "train-fusion",
            Command::Probe(_) => "probe",
            Command::Diagnose(_) => "diagnose",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file of `key = value` lines with `[command]` sections.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Any setting as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// `user<TAB>item[<TAB>timestamp]` file.
    #[arg(long, value_name = "FILE")]
    pub interactions: PathBuf,
    /// Item vectors (text or binary embedding format).
    #[arg(long, value_name = "FILE")]
    pub item_vectors: Option<PathBuf>,
    /// Raw item id of each vector row, one per line. Without it, rows follow
    /// first-seen item order in the interaction file.
    #[arg(long, value_name = "FILE", requires = "item_vectors")]
    pub item_ids: Option<PathBuf>,
    #[arg(long)]
    pub kcore: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `tab` or `whitespace`.
    #[arg(long)]
    pub separator: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// One or more comma-separated alpha values.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub interactions_per_user: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Bundle directory; with several alphas, one `alpha-<a>` subdirectory each.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset bundle directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Semantic checkpoint.
    #[arg(long, value_name = "DIR")]
    pub sem: PathBuf,
    /// Collaborative checkpoint.
    #[arg(long, value_name = "DIR")]
    pub cf: PathBuf,
    /// Comma-separated architectures: identity, linear, mlp0..mlp3.
    #[arg(long)]
    pub arch: Option<String>,
    /// Fraction of items the mappings are fitted on.
    #[arg(long)]
    pub item_split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// `restricted` or `full_catalog`.
    #[arg(long)]
    pub recall_mode: Option<String>,
    /// Also train the two-head contrastive alignment baseline.
    #[arg(long)]
    pub alignment: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// First model: checkpoint directory, optionally `#cf`, `#sem` or `#fused`.
    #[arg(long, value_name = "CKPT")]
    pub a: String,
    /// Second model.
    #[arg(long, value_name = "CKPT")]
    pub b: String,
    /// Fused model, compared against the union of the two.
    #[arg(long, value_name = "CKPT")]
    pub fused: Option<String>,
    /// Comma-separated cutoffs.
    #[arg(long)]
    pub k: Option<String>,
    /// `test` or `val`.
    #[arg(long)]
    pub part: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for artifacts.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    /// Output directory; defaults to `<run>/report`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
