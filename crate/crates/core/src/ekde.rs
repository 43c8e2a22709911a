//! Expectation kernel density estimation and weighted self-voting.
//!
//! Every positive-bag instance `x_ij` carries a soft label `w_ij`, the
//! probability that it belongs to the object class. With kernels `k+` and
//! `k-` the class densities are
//!
//! ```text
//! p(x | +1) = sum_pos w k+(x, x_ij) / sum_pos w
//! p(x | -1) = [sum_neg k-(x, x_ij) + sum_pos (1 - w) k-(x, x_ij)] / [n_neg + sum_pos (1 - w)]
//! ```
//!
//! and the priors are the soft class fractions `p(+1) = sum_pos w / N`,
//! `p(-1) = 1 - p(+1)`. Soft labels are updated synchronously with the
//! posterior `p(x|+1) p(+1) / (p(x|+1) p(+1) + p(x|-1) p(-1))`, starting from
//! `w = 1`. The voting score is `N [p(x|+1) p(+1) - p(x|-1) p(-1)]`; with a
//! single shared kernel it is the literal vote
//! `sum_pos w s - sum_neg s - sum_pos (1 - w) s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InstanceKey, Label};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, posterior_margin, GaussianKernel, KernelConfig, KernelMatrix};
use crate::par;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_DEGENERATE_FLOOR: f64 = 1e-12;

/// Positive-bag instance count above which the per-iteration kernel
/// matrices are recomputed on the fly instead of cached (two `P x P`
/// matrices of f64).
const CACHE_MAX_POSITIVE: usize = 4096;

/// Soft labels for the positive-bag instances, in the dataset's flat order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabels {
    values: Vec<f64>,
}

impl SoftLabels {
    /// The initialization used by the iteration: every instance is assumed
    /// to carry its bag's label.
    pub fn ones(dataset: &Dataset) -> Self {
        Self {
            values: vec![1.0; dataset.num_positive_instances()],
        }
    }

    pub fn from_values(dataset: &Dataset, values: Vec<f64>) -> Result<Self> {
        let expected = dataset.num_positive_instances();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} soft labels, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "soft label {v} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, dataset: &Dataset, key: &InstanceKey) -> Option<f64> {
        dataset
            .positive_instances()
            .position(|(b, i)| b.id == key.bag && i.id == key.instance)
            .map(|idx| self.values[idx])
    }

    pub fn to_map(&self, dataset: &Dataset) -> BTreeMap<InstanceKey, f64> {
        dataset
            .positive_keys()
            .into_iter()
            .zip(self.values.iter().copied())
            .collect()
    }

    /// Effective number of positive instances, `sum w`.
    pub fn positive_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `sum (1 - w)`.
    pub fn uncertain_negative_mass(&self) -> f64 {
        self.values.iter().map(|w| 1.0 - w).sum()
    }

    pub fn max_abs_diff(&self, other: &SoftLabels) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_len(&self, dataset: &Dataset) -> Result<()> {
        if self.values.len() != dataset.num_positive_instances() {
            return Err(Error::InvalidArgument(format!(
                "soft labels cover {} instances, dataset has {} positive-bag instances",
                self.values.len(),
                dataset.num_positive_instances()
            )));
        }
        Ok(())
    }
}

/// Class-conditional densities at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDensities {
    pub p_pos: f64,
    pub p_neg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub p1: f64,
    pub pm1: f64,
}

/// `p(+1) = sum w / N`, `p(-1) = (n_neg + sum (1 - w)) / N`.
pub fn class_priors(dataset: &Dataset, w: &SoftLabels) -> Priors {
    let n = dataset.num_instances() as f64;
    let neg_mass = dataset.num_negative_instances() as f64 + w.uncertain_negative_mass();
    Priors {
        p1: w.positive_mass() / n,
        pm1: neg_mass / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkdeConfig {
    pub kernel: KernelConfig,
    /// Convergence tolerance on `max |w' - w|`.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Class masses and posterior denominators below this are treated as degenerate.
    pub degenerate_floor: f64,
}

impl EkdeConfig {
    pub fn new(kernel: KernelConfig) -> Self {
        Self {
            kernel,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            degenerate_floor: DEFAULT_DEGENERATE_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.degenerate_floor.is_finite() && self.degenerate_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "degenerate floor must be positive, got {}",
                self.degenerate_floor
            )));
        }
        Ok(())
    }
}

/// Unnormalized kernel sums for one query: the positive numerator
/// `sum_pos w k+` and the negative numerator `sum_neg k- + sum_pos (1-w) k-`.
#[derive(Debug, Clone, Copy)]
struct ClassSums {
    pos: f64,
    neg: f64,
}

/// Class masses, i.e. the density denominators.
#[derive(Debug, Clone, Copy)]
struct ClassMasses {
    pos: f64,
    neg: f64,
}

/// Shared evaluation state for one dataset and kernel configuration.
struct Evaluator<'a> {
    pos: Vec<&'a [f64]>,
    neg: Vec<&'a [f64]>,
    k_pos: GaussianKernel,
    k_neg: GaussianKernel,
    n_total: f64,
    floor: f64,
}

impl<'a> Evaluator<'a> {
    fn new(dataset: &'a Dataset, kernel: &KernelConfig, floor: f64) -> Result<Self> {
        kernel.validate()?;
        let dim = dataset.dimension();
        Ok(Self {
            pos: dataset.positive_features(),
            neg: dataset.negative_features(),
            k_pos: GaussianKernel::new(kernel.sigma_pos, dim, kernel.normalized)?,
            k_neg: GaussianKernel::new(kernel.sigma_neg, dim, kernel.normalized)?,
            n_total: dataset.num_instances() as f64,
            floor,
        })
    }

    fn masses(&self, w: &SoftLabels, iteration: usize) -> Result<ClassMasses> {
        let pos = w.positive_mass();
        let neg = self.neg.len() as f64 + w.uncertain_negative_mass();
        if pos.is_nan() || pos <= self.floor {
            return Err(Error::DegenerateClass {
                class: "positive",
                iteration,
                mass: pos,
                floor: self.floor,
            });
        }
        if neg.is_nan() || neg <= self.floor {
            return Err(Error::DegenerateClass {
                class: "negative",
                iteration,
                mass: neg,
                floor: self.floor,
            });
        }
        Ok(ClassMasses { pos, neg })
    }

    fn negative_part(&self, query: &[f64]) -> f64 {
        self.neg
            .iter()
            .map(|y| self.k_neg.similarity(query, y))
            .sum()
    }

    /// Direct summation, left to right over positives then negatives.
    fn sums(&self, query: &[f64], w: &[f64]) -> ClassSums {
        let mut pos = 0.0;
        let mut uncertain = 0.0;
        for (y, &wt) in self.pos.iter().zip(w) {
            pos += wt * self.k_pos.similarity(query, y);
            uncertain += (1.0 - wt) * self.k_neg.similarity(query, y);
        }
        ClassSums {
            pos,
            neg: self.negative_part(query) + uncertain,
        }
    }

    /// Like [`Self::sums`] without the reference instance at flat index
    /// `skip` (positives first, then negatives).
    fn sums_excluding(&self, query: &[f64], w: &[f64], skip: usize) -> ClassSums {
        let mut pos = 0.0;
        let mut uncertain = 0.0;
        for (t, (y, &wt)) in self.pos.iter().zip(w).enumerate() {
            if t != skip {
                pos += wt * self.k_pos.similarity(query, y);
                uncertain += (1.0 - wt) * self.k_neg.similarity(query, y);
            }
        }
        let mut neg = 0.0;
        for (t, y) in self.neg.iter().enumerate() {
            if t + self.pos.len() != skip {
                neg += self.k_neg.similarity(query, y);
            }
        }
        ClassSums {
            pos,
            neg: neg + uncertain,
        }
    }

    fn densities(&self, sums: ClassSums, masses: ClassMasses) -> ClassDensities {
        let mut p_pos = sums.pos / masses.pos;
        let mut p_neg = sums.neg / masses.neg;
        if self.k_pos.is_normalized() {
            p_pos *= self.k_pos.norm_constant();
        }
        if self.k_neg.is_normalized() {
            p_neg *= self.k_neg.norm_constant();
        }
        ClassDensities { p_pos, p_neg }
    }

    fn priors(&self, masses: ClassMasses) -> Priors {
        Priors {
            p1: masses.pos / self.n_total,
            pm1: masses.neg / self.n_total,
        }
    }

    fn score(&self, sums: ClassSums, masses: ClassMasses) -> f64 {
        let d = self.densities(sums, masses);
        let pr = self.priors(masses);
        self.n_total * (d.p_pos * pr.p1 - d.p_neg * pr.pm1)
    }

    /// `p(x|+1)p(+1) / (p(x|+1)p(+1) + p(x|-1)p(-1))`.
    ///
    /// The class masses cancel against the priors, so the ratio only needs
    /// the kernel sums and the log density constants.
    fn posterior(&self, sums: ClassSums) -> f64 {
        if sums.pos + sums.neg <= self.floor {
            return 0.5;
        }
        if sums.neg == 0.0 {
            return 1.0;
        }
        if sums.pos == 0.0 {
            return 0.0;
        }
        let log_ratio =
            (sums.neg.ln() + self.k_neg.log_norm()) - (sums.pos.ln() + self.k_pos.log_norm());
        1.0 / (1.0 + log_ratio.exp())
    }

    fn margin(&self, sums: ClassSums) -> f64 {
        posterior_margin(
            sums.pos,
            self.k_pos.log_norm(),
            sums.neg,
            self.k_neg.log_norm(),
        )
    }
}

/// Cached positive-by-positive kernel values for the iteration. Summation
/// order matches [`Evaluator::sums`], so cached and direct results agree
/// bit for bit.
struct PositiveCache {
    k_pos: KernelMatrix,
    k_neg: KernelMatrix,
    negative_parts: Vec<f64>,
}

impl PositiveCache {
    fn build(ev: &Evaluator<'_>) -> Result<Self> {
        Ok(Self {
            k_pos: kernel_matrix(&ev.pos, &ev.pos, ev.k_pos.sigma(), false)?,
            k_neg: kernel_matrix(&ev.pos, &ev.pos, ev.k_neg.sigma(), false)?,
            negative_parts: par::map_range(ev.pos.len(), |q| ev.negative_part(ev.pos[q])),
        })
    }

    fn sums(&self, q: usize, w: &[f64]) -> ClassSums {
        let mut pos = 0.0;
        let mut uncertain = 0.0;
        for ((&kp, &kn), &wt) in self.k_pos.row(q).iter().zip(self.k_neg.row(q)).zip(w) {
            pos += wt * kp;
            uncertain += (1.0 - wt) * kn;
        }
        ClassSums {
            pos,
            neg: self.negative_parts[q] + uncertain,
        }
    }
}

/// Class-conditional densities at `query` under soft labels `w`.
pub fn class_conditionals(
    query: &[f64],
    dataset: &Dataset,
    w: &SoftLabels,
    kernel: &KernelConfig,
    degenerate_floor: f64,
) -> Result<ClassDensities> {
    check_query(query, dataset)?;
    w.check_len(dataset)?;
    let ev = Evaluator::new(dataset, kernel, degenerate_floor)?;
    let masses = ev.masses(w, 0)?;
    Ok(ev.densities(ev.sums(query, w.values()), masses))
}

/// `N [p(x|+1) p(+1) - p(x|-1) p(-1)]`.
pub fn voting_score(
    query: &[f64],
    dataset: &Dataset,
    w: &SoftLabels,
    kernel: &KernelConfig,
    degenerate_floor: f64,
) -> Result<f64> {
    check_query(query, dataset)?;
    w.check_len(dataset)?;
    let ev = Evaluator::new(dataset, kernel, degenerate_floor)?;
    let masses = ev.masses(w, 0)?;
    Ok(ev.score(ev.sums(query, w.values()), masses))
}

/// The vote of every instance for its own (soft) label with one shared
/// similarity kernel: `sum_pos w s - sum_neg s - sum_pos (1 - w) s`.
pub fn weighted_vote(
    query: &[f64],
    dataset: &Dataset,
    w: &SoftLabels,
    sigma: f64,
    normalized: bool,
) -> Result<f64> {
    check_query(query, dataset)?;
    w.check_len(dataset)?;
    let k = GaussianKernel::new(sigma, dataset.dimension(), normalized)?;
    let mut support = 0.0;
    let mut against_uncertain = 0.0;
    for ((_, inst), &wt) in dataset.positive_instances().zip(w.values()) {
        let s = k.density(query, &inst.features);
        support += wt * s;
        against_uncertain += (1.0 - wt) * s;
    }
    let against_definite: f64 = dataset
        .negative_instances()
        .map(|(_, inst)| k.density(query, &inst.features))
        .sum();
    Ok(support - (against_definite + against_uncertain))
}

/// One synchronous soft-label update: every new value is computed from the
/// input labels.
pub fn update_soft_labels(
    dataset: &Dataset,
    w: &SoftLabels,
    kernel: &KernelConfig,
    degenerate_floor: f64,
) -> Result<SoftLabels> {
    w.check_len(dataset)?;
    let ev = Evaluator::new(dataset, kernel, degenerate_floor)?;
    ev.masses(w, 0)?;
    let values = par::map_range(ev.pos.len(), |q| {
        ev.posterior(ev.sums(ev.pos[q], w.values()))
    });
    Ok(SoftLabels { values })
}

/// Sign decision with ties going to the background class.
pub fn decide(score: f64) -> Result<Label> {
    if !score.is_finite() {
        return Err(Error::NonFiniteScore {
            score,
            context: "decision".into(),
        });
    }
    Ok(if score > 0.0 {
        Label::Positive
    } else {
        Label::Negative
    })
}

fn check_query(query: &[f64], dataset: &Dataset) -> Result<()> {
    if query.len() != dataset.dimension() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dimension(),
            found: query.len(),
            context: "query".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub key: InstanceKey,
    pub in_positive_bag: bool,
    pub score: f64,
    pub label: Label,
}

/// Scores and sign decisions for a list of instances.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub entries: Vec<ScoredInstance>,
}

impl ScoreTable {
    /// Builds a table, deriving every label with [`decide`].
    pub fn from_scores(scores: impl IntoIterator<Item = (InstanceKey, bool, f64)>) -> Result<Self> {
        let entries = scores
            .into_iter()
            .map(|(key, in_positive_bag, score)| {
                let label = decide(score).map_err(|_| Error::NonFiniteScore {
                    score,
                    context: key.to_string(),
                })?;
                Ok(ScoredInstance {
                    key,
                    in_positive_bag,
                    score,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &InstanceKey) -> Option<&ScoredInstance> {
        self.entries.iter().find(|e| &e.key == key)
    }

    pub fn positive_bag_entries(&self) -> impl Iterator<Item = &ScoredInstance> {
        self.entries.iter().filter(|e| e.in_positive_bag)
    }

    /// Labels of the positive-bag instances.
    pub fn positive_labels(&self) -> BTreeMap<InstanceKey, Label> {
        self.positive_bag_entries()
            .map(|e| (e.key.clone(), e.label))
            .collect()
    }

    pub fn positive_scores(&self) -> BTreeMap<InstanceKey, f64> {
        self.positive_bag_entries()
            .map(|e| (e.key.clone(), e.score))
            .collect()
    }

    /// Number of positive-bag instances labeled +1.
    pub fn detected_count(&self) -> usize {
        self.positive_bag_entries()
            .filter(|e| e.label.is_positive())
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub max_delta: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub positive_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkdeRun {
    pub soft_labels: SoftLabels,
    /// Voting scores `N [p(x|+1)p(+1) - p(x|-1)p(-1)]` for every instance.
    pub scores: ScoreTable,
    /// Posterior margins `p(+1|x) - p(-1|x)` in `[-1, 1]`; same signs as `scores`.
    pub margins: ScoreTable,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationStats>,
}

/// Leave-one-out agreement of the posterior with the bag labels under soft
/// labels `w`: the mean over positive bags of the largest instance margin
/// minus the mean margin of the negative-bag instances. Lies in `[-2, 2]`.
pub fn bag_agreement(dataset: &Dataset, kernel: &KernelConfig, w: &SoftLabels) -> Result<f64> {
    dataset.require_both_classes()?;
    w.check_len(dataset)?;
    let ev = Evaluator::new(dataset, kernel, DEFAULT_DEGENERATE_FLOOR)?;
    let n_pos = ev.pos.len();
    let all: Vec<&[f64]> = ev.pos.iter().chain(ev.neg.iter()).copied().collect();
    let margins = par::map_range(all.len(), |q| {
        ev.margin(ev.sums_excluding(all[q], w.values(), q))
    });
    let mut best_sum = 0.0;
    let mut offset = 0;
    for bag in dataset.positive_bags() {
        let n = bag.instances.len();
        best_sum += margins[offset..offset + n]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        offset += n;
    }
    let pos_term = best_sum / dataset.positive_bags().len() as f64;
    let neg_term = margins[n_pos..].iter().sum::<f64>() / (all.len() - n_pos) as f64;
    Ok(pos_term - neg_term)
}

/// Soft-label iteration from `w = 1`, followed by scoring.
pub fn run_ekde(dataset: &Dataset, config: &EkdeConfig) -> Result<EkdeRun> {
    run_ekde_from(dataset, config, SoftLabels::ones(dataset))
}

/// Soft-label iteration from an explicit starting point.
pub fn run_ekde_from(dataset: &Dataset, config: &EkdeConfig, init: SoftLabels) -> Result<EkdeRun> {
    config.validate()?;
    dataset.require_both_classes()?;
    init.check_len(dataset)?;
    let ev = Evaluator::new(dataset, &config.kernel, config.degenerate_floor)?;
    let cache = if ev.pos.len() <= CACHE_MAX_POSITIVE {
        Some(PositiveCache::build(&ev)?)
    } else {
        None
    };
    let sums_at = |q: usize, w: &[f64]| match &cache {
        Some(c) => c.sums(q, w),
        None => ev.sums(ev.pos[q], w),
    };

    let mut w = init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=config.max_iter {
        ev.masses(&w, iteration)?;
        let values = par::map_range(ev.pos.len(), |q| ev.posterior(sums_at(q, w.values())));
        let next = SoftLabels { values };
        let max_delta = next.max_abs_diff(&w);
        history.push(IterationStats {
            iteration,
            max_delta,
            min_w: next.values.iter().copied().fold(f64::INFINITY, f64::min),
            max_w: next
                .values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            positive_mass: next.positive_mass(),
        });
        w = next;
        iterations = iteration;
        if max_delta < config.epsilon {
            converged = true;
            break;
        }
    }

    let masses = ev.masses(&w, iterations + 1)?;
    let n_pos = ev.pos.len();
    let all: Vec<&[f64]> = ev.pos.iter().chain(ev.neg.iter()).copied().collect();
    let sums = par::map_range(all.len(), |q| {
        if q < n_pos {
            sums_at(q, w.values())
        } else {
            ev.sums(all[q], w.values())
        }
    });
    let keys = dataset.keys();
    let scores = ScoreTable::from_scores(
        keys.iter()
            .cloned()
            .zip(&sums)
            .enumerate()
            .map(|(q, (k, s))| (k, q < n_pos, ev.score(*s, masses))),
    )?;
    let margins = ScoreTable::from_scores(
        keys.into_iter()
            .zip(&sums)
            .enumerate()
            .map(|(q, (k, s))| (k, q < n_pos, ev.margin(*s))),
    )?;
    Ok(EkdeRun {
        soft_labels: w,
        scores,
        margins,
        iterations,
        converged,
        history,
    })
}
