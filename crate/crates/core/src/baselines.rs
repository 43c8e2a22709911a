//! Negative-mining baselines expressed as votes of negative instances.
//!
//! All similarities are unnormalized Gaussian kernels with a single
//! bandwidth. Scores are produced for positive-bag instances only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, InstanceKey, Label};
use crate::error::{Error, Result};
use crate::kernels::GaussianKernel;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    NegMin,
    Crane,
    NegVote,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::NegMin => "negmin",
            BaselineMethod::Crane => "crane",
            BaselineMethod::NegVote => "negvote",
        }
    }
}

/// Baseline scores for the positive-bag instances, in the dataset's flat order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub method: BaselineMethod,
    pub entries: Vec<(InstanceKey, f64)>,
}

impl BaselineScores {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &InstanceKey) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, s)| *s)
    }

    pub fn to_map(&self) -> BTreeMap<InstanceKey, f64> {
        self.entries.iter().cloned().collect()
    }
}

fn similarity_kernel(dataset: &Dataset, sigma: f64) -> Result<GaussianKernel> {
    GaussianKernel::new(sigma, dataset.dimension(), false)
}

fn require_negatives(dataset: &Dataset) -> Result<()> {
    if dataset.negative_bags().is_empty() {
        return Err(Error::Validation(
            "baselines need at least one negative bag".into(),
        ));
    }
    Ok(())
}

fn negmin_with(query: &[f64], dataset: &Dataset, kernel: &GaussianKernel) -> f64 {
    // closed form of min sum(-u s) with exactly one selected instance per negative bag
    -dataset
        .negative_bags()
        .iter()
        .map(|bag| {
            bag.instances
                .iter()
                .map(|i| kernel.similarity(query, &i.features))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
}

/// Minus the summed similarity to the most similar instance of each negative bag.
pub fn negmin_score(query: &[f64], dataset: &Dataset, sigma: f64) -> Result<f64> {
    require_negatives(dataset)?;
    check_dim(query, dataset)?;
    Ok(negmin_with(
        query,
        dataset,
        &similarity_kernel(dataset, sigma)?,
    ))
}

/// The instance of `bag` with the highest NegMin score; ties go to the
/// earliest instance.
pub fn negmin_select(bag: &Bag, dataset: &Dataset, sigma: f64) -> Result<String> {
    if bag.label != Label::Positive {
        return Err(Error::InvalidArgument(format!(
            "negmin_select needs a positive bag, `{}` is negative",
            bag.id
        )));
    }
    require_negatives(dataset)?;
    let kernel = similarity_kernel(dataset, sigma)?;
    let mut best: Option<(usize, f64)> = None;
    for (j, inst) in bag.instances.iter().enumerate() {
        check_dim(&inst.features, dataset)?;
        let s = negmin_with(&inst.features, dataset, &kernel);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    let (j, _) = best.ok_or_else(|| Error::EmptyBag {
        bag: bag.id.clone(),
    })?;
    Ok(bag.instances[j].id.clone())
}

pub fn negmin_scores(dataset: &Dataset, sigma: f64) -> Result<BaselineScores> {
    require_negatives(dataset)?;
    let kernel = similarity_kernel(dataset, sigma)?;
    let feats = dataset.positive_features();
    let scores = par::map_range(feats.len(), |q| negmin_with(feats[q], dataset, &kernel));
    Ok(BaselineScores {
        method: BaselineMethod::NegMin,
        entries: dataset.positive_keys().into_iter().zip(scores).collect(),
    })
}

/// Labels from per-bag NegMin selection: one +1 per positive bag.
pub fn negmin_labels(dataset: &Dataset, sigma: f64) -> Result<BTreeMap<InstanceKey, Label>> {
    let mut out = BTreeMap::new();
    for bag in dataset.positive_bags() {
        let chosen = negmin_select(bag, dataset, sigma)?;
        for inst in &bag.instances {
            let label = if inst.id == chosen {
                Label::Positive
            } else {
                Label::Negative
            };
            out.insert(InstanceKey::new(&bag.id, &inst.id), label);
        }
    }
    Ok(out)
}

/// CRANE with the constant cut `s_cut = 1`.
pub fn crane_scores(dataset: &Dataset, sigma: f64) -> Result<BaselineScores> {
    crane_scores_with_cut(dataset, sigma, |_| 1.0)
}

/// CRANE: every negative-bag instance penalizes the positive-bag
/// instance(s) most similar to it by `cut(similarity)`. All instances tied
/// at the maximum are penalized.
pub fn crane_scores_with_cut<F>(dataset: &Dataset, sigma: f64, cut: F) -> Result<BaselineScores>
where
    F: Fn(f64) -> f64 + Sync,
{
    require_negatives(dataset)?;
    if dataset.positive_bags().is_empty() {
        return Err(Error::Validation(
            "CRANE needs at least one positive bag".into(),
        ));
    }
    let kernel = similarity_kernel(dataset, sigma)?;
    let pos = dataset.positive_features();
    let neg = dataset.negative_features();
    // for each negative, the indices of its most similar positives and the penalty
    let votes = par::map_range(neg.len(), |n| {
        let sims: Vec<f64> = pos.iter().map(|p| kernel.similarity(neg[n], p)).collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = sims
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= max)
            .map(|(t, _)| t)
            .collect();
        (winners, cut(max))
    });
    let mut scores = vec![0.0; pos.len()];
    for (winners, penalty) in votes {
        for t in winners {
            scores[t] -= penalty;
        }
    }
    // -0.0 would otherwise leak into reports
    for s in &mut scores {
        if *s == 0.0 {
            *s = 0.0;
        }
    }
    Ok(BaselineScores {
        method: BaselineMethod::Crane,
        entries: dataset.positive_keys().into_iter().zip(scores).collect(),
    })
}

/// Minus the summed similarity to all negative-bag instances.
pub fn negvote_scores(dataset: &Dataset, sigma: f64) -> Result<BaselineScores> {
    require_negatives(dataset)?;
    let kernel = similarity_kernel(dataset, sigma)?;
    let pos = dataset.positive_features();
    let neg = dataset.negative_features();
    let scores = par::map_range(pos.len(), |q| {
        -neg.iter()
            .map(|n| kernel.similarity(pos[q], n))
            .sum::<f64>()
    });
    Ok(BaselineScores {
        method: BaselineMethod::NegVote,
        entries: dataset.positive_keys().into_iter().zip(scores).collect(),
    })
}

pub fn negvote_score(query: &[f64], dataset: &Dataset, sigma: f64) -> Result<f64> {
    require_negatives(dataset)?;
    check_dim(query, dataset)?;
    let kernel = similarity_kernel(dataset, sigma)?;
    Ok(-dataset
        .negative_instances()
        .map(|(_, i)| kernel.similarity(query, &i.features))
        .sum::<f64>())
}

/// Marks the `k` highest-scoring instances +1. Ties at the cut are broken
/// by `(bag id, instance id)` in lexicographic order.
pub fn top_k_select(scores: &BaselineScores, k: usize) -> Result<BTreeMap<InstanceKey, Label>> {
    top_k_labels(scores.entries.iter().map(|(key, s)| (key, *s)), k)
}

pub fn top_k_labels<'a>(
    scores: impl Iterator<Item = (&'a InstanceKey, f64)>,
    k: usize,
) -> Result<BTreeMap<InstanceKey, Label>> {
    let mut ranked: Vec<(&InstanceKey, f64)> = scores.collect();
    if k > ranked.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k of {k} exceeds the {} scored instances",
            ranked.len()
        )));
    }
    if let Some((key, s)) = ranked.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::NonFiniteScore {
            score: *s,
            context: key.to_string(),
        });
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (key, _))| {
            let label = if rank < k {
                Label::Positive
            } else {
                Label::Negative
            };
            (key.clone(), label)
        })
        .collect())
}

/// Per positive bag, +1 for the highest-scoring instance (first on ties).
pub fn per_bag_argmax(scores: &BaselineScores) -> BTreeMap<InstanceKey, Label> {
    let mut best: BTreeMap<&str, (&InstanceKey, f64)> = BTreeMap::new();
    for (key, s) in &scores.entries {
        match best.get(key.bag.as_str()) {
            Some((_, b)) if *s <= *b => {}
            _ => {
                best.insert(&key.bag, (key, *s));
            }
        }
    }
    scores
        .entries
        .iter()
        .map(|(key, _)| {
            let chosen = best.get(key.bag.as_str()).map(|(k, _)| *k) == Some(key);
            let label = if chosen {
                Label::Positive
            } else {
                Label::Negative
            };
            (key.clone(), label)
        })
        .collect()
}

fn check_dim(query: &[f64], dataset: &Dataset) -> Result<()> {
    if query.len() != dataset.dimension() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dimension(),
            found: query.len(),
            context: "query".into(),
        });
    }
    Ok(())
}
