//! On-disk JSON layouts written and read by the CLI.

use std::path::PathBuf;

use ekde_core::eval::{EvalReport, Media};
use ekde_core::BandwidthObjective;
use serde::{Deserialize, Serialize};

use crate::args::Method;

pub const TOOL: &str = "ekde";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// How the eKDE bandwidths were chosen, when any was left to the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRecord {
    pub objective: BandwidthObjective,
    pub pos_grid: Vec<f64>,
    pub neg_grid: Vec<f64>,
    pub best_score: f64,
    pub rejected_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkdeSettings {
    pub sigma_pos: f64,
    pub sigma_neg: f64,
    pub normalized_kernel: bool,
    pub epsilon: f64,
    pub max_iter: usize,
    pub degenerate_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionRecord>,
}

/// Fully resolved annotation settings; enough to rerun a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateConfig {
    pub method: Method,
    pub normalize_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ekde: Option<EkdeSettings>,
    /// Similarity bandwidth of the baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStats {
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub input: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub config: AnnotateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ekde_run: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub bag: String,
    pub instance: String,
    pub in_positive_bag: bool,
    /// The score the label was derived from.
    pub score: f64,
    /// `1` or `-1`; null for negative-bag instances, whose label is known.
    pub label: Option<i8>,
    /// eKDE voting score, before any refinement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<f64>,
    /// eKDE posterior margin `p(+1|x) - p(-1|x)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Results {
    pub manifest: Manifest,
    pub detected_count: usize,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub input: PathBuf,
    pub results: PathBuf,
    pub media: Media,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub manifest: EvaluateManifest,
    pub method: Method,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub ap: f64,
    pub correct_bags: usize,
    pub evaluated_bags: usize,
    pub detected_count: usize,
    /// Top-k used to match eKDE's detection count, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    /// Instance-level accuracy over positive bags; absent without full
    /// ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub input: PathBuf,
    pub media: Media,
    pub threshold: f64,
    pub ekde: AnnotateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ekde_run: Option<RunStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub manifest: CompareManifest,
    pub rows: Vec<CompareRow>,
}
