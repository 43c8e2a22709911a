use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ekde_core::eval::Media;
use ekde_core::BandwidthObjective;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "ekde", version, about = "Weakly supervised segment annotation")]
pub struct Cli {
    /// Worker threads for the data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Suppress progress and summary lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every instance of a dataset.
    Annotate(AnnotateArgs),
    /// Score a results file against the dataset's ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Run every method on one dataset and tabulate average precision.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ekde,
    Negmin,
    Crane,
    Negvote,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ekde, Method::Negmin, Method::Crane, Method::Negvote];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ekde => "ekde",
            Method::Negmin => "negmin",
            Method::Crane => "crane",
            Method::Negvote => "negvote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    BagAgreement,
    DensityDifference,
}

impl From<ObjectiveArg> for BandwidthObjective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::BagAgreement => BandwidthObjective::BagAgreement,
            ObjectiveArg::DensityDifference => BandwidthObjective::DensityDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MediaArg {
    Image,
    Video,
}

impl From<MediaArg> for Media {
    fn from(m: MediaArg) -> Self {
        match m {
            MediaArg::Image => Media::Image,
            MediaArg::Video => Media::Video,
        }
    }
}

/// Settings shared by `annotate` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Keep raw feature vectors instead of L2-normalizing them.
    #[arg(long)]
    pub no_normalize: bool,
    /// Positive-class bandwidth; selected from the grid when absent.
    #[arg(long)]
    pub sigma_pos: Option<f64>,
    /// Negative-class bandwidth; selected from the grid when absent.
    #[arg(long)]
    pub sigma_neg: Option<f64>,
    /// Comma-separated candidate bandwidths.
    #[arg(long, value_delimiter = ',')]
    pub bandwidth_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "bag-agreement")]
    pub bandwidth_objective: ObjectiveArg,
    /// Use kernels without the Gaussian density constant.
    #[arg(long)]
    pub unnormalized_kernel: bool,
    /// Convergence threshold on the largest soft-label change.
    #[arg(long, default_value_t = ekde_core::ekde::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = ekde_core::ekde::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Bandwidth of the baselines' similarity kernel.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Blend each score with its neighbours' mean before labeling.
    #[arg(long)]
    pub refine: bool,
    /// Neighbour weight of the refinement blend.
    #[arg(long, default_value_t = ekde_core::refine::DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, short, required_unless_present = "replay")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ekde")]
    pub method: Method,
    /// Label exactly the K highest-scoring positive-bag instances.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Record the wall-clock duration in the manifest.
    #[arg(long)]
    pub record_timing: bool,
    /// Rerun the configuration stored in an earlier results file.
    #[arg(long, conflicts_with_all = ["input", "top_k"])]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub results: PathBuf,
    #[arg(long, value_enum, default_value = "image")]
    pub media: MediaArg,
    /// Overlap threshold; overrides the media default.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the precision/recall sweep as CSV.
    #[arg(long)]
    pub pr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with the generator settings.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Dataset path; the ground-truth sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Methods to tabulate.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "ekde,negmin,crane,negvote"
    )]
    pub methods: Vec<Method>,
    #[arg(long, value_enum, default_value = "image")]
    pub media: MediaArg,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub method_args: MethodArgs,
}
