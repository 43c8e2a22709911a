//! Isotropic Gaussian kernels, kernel matrices and per-class bandwidth selection.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance};
use crate::ekde::{bag_agreement, run_ekde, EkdeConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::par;

/// The bandwidth grid searched when no bandwidth is given.
pub const DEFAULT_BANDWIDTH_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

impl AsRef<[f64]> for Instance {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

/// Bandwidths for the two class densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma_pos: f64,
    pub sigma_neg: f64,
    /// Include the `(2 pi sigma^2)^(-D/2)` density constant.
    pub normalized: bool,
}

impl KernelConfig {
    pub fn new(sigma_pos: f64, sigma_neg: f64, normalized: bool) -> Result<Self> {
        check_sigma(sigma_pos)?;
        check_sigma(sigma_neg)?;
        Ok(Self {
            sigma_pos,
            sigma_neg,
            normalized,
        })
    }

    /// Same bandwidth for both classes.
    pub fn shared(sigma: f64, normalized: bool) -> Result<Self> {
        Self::new(sigma, sigma, normalized)
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma_pos)?;
        check_sigma(self.sigma_neg)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "bandwidth must be a positive finite number, got {sigma}"
        )))
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// A Gaussian kernel with fixed bandwidth and dimension.
///
/// `similarity` is the unnormalized `exp(-|x-y|^2 / 2 sigma^2)` in `(0, 1]`;
/// `density` multiplies it by the normalization constant when the kernel is
/// normalized. The constant is also kept in log form because it overflows
/// f64 for small bandwidths in high dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    dimension: usize,
    normalized: bool,
    inv_two_var: f64,
    log_norm: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64, dimension: usize, normalized: bool) -> Result<Self> {
        check_sigma(sigma)?;
        let log_norm = if normalized {
            -(dimension as f64) / 2.0 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
        } else {
            0.0
        };
        Ok(Self {
            sigma,
            dimension,
            normalized,
            inv_two_var: 1.0 / (2.0 * sigma * sigma),
            log_norm,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Natural log of the density constant (0 when unnormalized).
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn norm_constant(&self) -> f64 {
        self.log_norm.exp()
    }

    #[inline]
    pub fn similarity(&self, x: &[f64], y: &[f64]) -> f64 {
        (-squared_distance(x, y) * self.inv_two_var).exp()
    }

    #[inline]
    pub fn density(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = self.similarity(x, y);
        if self.normalized {
            s * self.norm_constant()
        } else {
            s
        }
    }
}

/// `exp(-|x-y|^2 / (2 sigma^2))`, times `(2 pi sigma^2)^(-D/2)` when `normalized`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64, normalized: bool) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
            context: "gaussian_kernel".into(),
        });
    }
    Ok(GaussianKernel::new(sigma, x.len(), normalized)?.density(x, y))
}

/// Dense row-major kernel values between queries (rows) and references (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    sigma: f64,
}

impl KernelMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn kernel_matrix<Q, R>(
    queries: &[Q],
    refs: &[R],
    sigma: f64,
    normalized: bool,
) -> Result<KernelMatrix>
where
    Q: AsRef<[f64]> + Sync,
    R: AsRef<[f64]> + Sync,
{
    let dim = queries
        .first()
        .map(|q| q.as_ref().len())
        .or_else(|| refs.first().map(|r| r.as_ref().len()))
        .unwrap_or(0);
    for (i, v) in queries
        .iter()
        .map(AsRef::as_ref)
        .chain(refs.iter().map(AsRef::as_ref))
        .enumerate()
    {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
                context: format!("kernel_matrix input {i}"),
            });
        }
    }
    let kernel = GaussianKernel::new(sigma, dim, normalized)?;
    let rows = par::map_range(queries.len(), |q| {
        let x = queries[q].as_ref();
        refs.iter()
            .map(|r| kernel.density(x, r.as_ref()))
            .collect::<Vec<_>>()
    });
    Ok(KernelMatrix {
        rows: queries.len(),
        cols: refs.len(),
        values: rows.into_iter().flatten().collect(),
        sigma,
    })
}

/// Relative slack under which two selection scores are treated as equal.
pub const SELECTION_TIE_TOLERANCE: f64 = 1e-9;

/// Criterion scored for every `(sigma_pos, sigma_neg)` grid pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthObjective {
    /// Runs the soft-label iteration for the pair and scores the converged
    /// labels with [`bag_agreement`]. Pairs whose run degenerates or does
    /// not converge are rejected.
    #[default]
    BagAgreement,
    /// In-sample `sum |A - B|` at `w = 1`, with `A = p(x|1) p(1)` and
    /// `B = p(x|-1) p(-1)`. With normalized kernels the self term dominates
    /// and it favours the smallest bandwidth in the grid.
    DensityDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub sigma_pos: f64,
    pub sigma_neg: f64,
    /// `None` for a rejected pair.
    pub score: Option<f64>,
}

/// Outcome of the grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub config: KernelConfig,
    pub objective: BandwidthObjective,
    pub best_score: f64,
    /// Every pair in visiting order.
    pub evaluated: Vec<PairScore>,
}

/// Per-instance unnormalized kernel sums over each class at `w = 1`.
fn class_kernel_sums(all: &[&[f64]], n_pos: usize, kernel: &GaussianKernel) -> Vec<(f64, f64)> {
    par::map_range(all.len(), |q| {
        let x = all[q];
        let (mut p, mut n) = (0.0, 0.0);
        for (t, y) in all.iter().enumerate() {
            let k = kernel.similarity(x, y);
            if t < n_pos {
                p += k;
            } else {
                n += k;
            }
        }
        (p, n)
    })
}

/// `(A - B) / (A + B)` from `A = exp(log_a) * a`, `B = exp(log_b) * b`,
/// evaluated without forming the (possibly overflowing) constants.
pub(crate) fn posterior_margin(a: f64, log_norm_a: f64, b: f64, log_norm_b: f64) -> f64 {
    match (a > 0.0, b > 0.0) {
        (false, false) => 0.0,
        (true, false) => 1.0,
        (false, true) => -1.0,
        (true, true) => {
            let diff = (a.ln() + log_norm_a) - (b.ln() + log_norm_b);
            (diff / 2.0).tanh()
        }
    }
}

/// Picks `(sigma_pos, sigma_neg)` from `grid x grid` with the default
/// iteration settings.
pub fn select_bandwidths(
    dataset: &Dataset,
    grid: &[f64],
    normalized: bool,
    objective: BandwidthObjective,
) -> Result<BandwidthSelection> {
    let template = EkdeConfig::new(KernelConfig::shared(1.0, normalized)?);
    select_bandwidths_on(dataset, grid, grid, &template, objective)
}

/// Grid search over `pos_grid x neg_grid`. The bandwidths in `template`
/// are ignored; its normalization and iteration settings are used for
/// every candidate.
///
/// Pairs are visited with `sigma_pos` in the outer loop, both in grid
/// order. Scores within [`SELECTION_TIE_TOLERANCE`] (relative) of the
/// maximum count as ties, and ties go to the earliest pair.
pub fn select_bandwidths_on(
    dataset: &Dataset,
    pos_grid: &[f64],
    neg_grid: &[f64],
    template: &EkdeConfig,
    objective: BandwidthObjective,
) -> Result<BandwidthSelection> {
    if pos_grid.is_empty() || neg_grid.is_empty() {
        return Err(Error::InvalidArgument("bandwidth grid is empty".into()));
    }
    for &s in pos_grid.iter().chain(neg_grid) {
        check_sigma(s)?;
    }
    dataset.require_both_classes()?;
    let normalized = template.kernel.normalized;
    let pairs = pos_grid
        .iter()
        .flat_map(|&sp| neg_grid.iter().map(move |&sn| (sp, sn)));

    let evaluated: Vec<PairScore> = match objective {
        BandwidthObjective::BagAgreement => {
            let mut out = Vec::with_capacity(pos_grid.len() * neg_grid.len());
            for (sp, sn) in pairs {
                let config = EkdeConfig {
                    kernel: KernelConfig::new(sp, sn, normalized)?,
                    ..*template
                };
                let score = match run_ekde(dataset, &config) {
                    Ok(run) if run.converged => {
                        Some(bag_agreement(dataset, &config.kernel, &run.soft_labels)?)
                    }
                    Ok(_) => None,
                    Err(e) if e.kind() == ErrorKind::DegenerateClass => None,
                    Err(e) => return Err(e),
                };
                out.push(PairScore {
                    sigma_pos: sp,
                    sigma_neg: sn,
                    score,
                });
            }
            out
        }
        BandwidthObjective::DensityDifference => {
            let n_pos = dataset.num_positive_instances();
            let all: Vec<&[f64]> = dataset
                .instances()
                .map(|(_, i)| i.features.as_slice())
                .collect();
            let n = all.len() as f64;
            let dim = dataset.dimension();
            let mut distinct: Vec<f64> = pos_grid.iter().chain(neg_grid).copied().collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let mut per_sigma = Vec::with_capacity(distinct.len());
            for &s in &distinct {
                let kernel = GaussianKernel::new(s, dim, normalized)?;
                let c = if normalized {
                    kernel.norm_constant()
                } else {
                    1.0
                };
                per_sigma.push((c, class_kernel_sums(&all, n_pos, &kernel)));
            }
            let lookup = |s: f64| {
                let idx = distinct
                    .iter()
                    .position(|&d| d == s)
                    .expect("sigma in grid");
                &per_sigma[idx]
            };
            pairs
                .map(|(sp, sn)| {
                    let (cp, sums_p) = lookup(sp);
                    let (cn, sums_n) = lookup(sn);
                    let score = (0..all.len())
                        .map(|x| (cp * sums_p[x].0 / n - cn * sums_n[x].1 / n).abs())
                        .sum::<f64>();
                    PairScore {
                        sigma_pos: sp,
                        sigma_neg: sn,
                        score: Some(score),
                    }
                })
                .collect()
        }
    };

    let max = evaluated
        .iter()
        .filter_map(|e| e.score)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoViableBandwidth {
            pairs: evaluated.len(),
        });
    }
    let cut = max - SELECTION_TIE_TOLERANCE * max.abs().max(1.0);
    let best = evaluated
        .iter()
        .find(|e| e.score.is_some_and(|s| s >= cut))
        .expect("maximum is attained");
    Ok(BandwidthSelection {
        config: KernelConfig::new(best.sigma_pos, best.sigma_neg, normalized)?,
        objective,
        best_score: best.score.expect("scored pair"),
        evaluated,
    })
}
