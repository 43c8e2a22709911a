//! Bag-overlap correctness, average precision and PR curves.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, InstanceKey, Label};
use crate::error::{Error, Result};

pub const IMAGE_THRESHOLD: f64 = 0.5;
pub const VIDEO_THRESHOLD: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Media {
    #[default]
    Image,
    Video,
}

impl Media {
    pub fn threshold(self) -> f64 {
        match self {
            Media::Image => IMAGE_THRESHOLD,
            Media::Video => VIDEO_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagResult {
    pub bag: String,
    pub overlap: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub per_bag: Vec<BagResult>,
    pub threshold_used: f64,
    pub detected_count: usize,
}

impl EvalReport {
    pub fn correct_count(&self) -> usize {
        self.per_bag.iter().filter(|b| b.correct).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

/// Size-weighted IoU between the predicted and ground-truth segment sets.
pub fn bag_overlap<'a>(predicted: impl IntoIterator<Item = &'a str>, bag: &Bag) -> Result<f64> {
    if !bag.has_ground_truth() {
        return Err(Error::Validation(format!(
            "bag `{}` has no ground-truth flags",
            bag.id
        )));
    }
    let predicted: BTreeSet<&str> = predicted.into_iter().collect();
    if let Some(id) = predicted.iter().find(|id| bag.instance(id).is_none()) {
        return Err(Error::InvalidArgument(format!(
            "predicted instance `{id}` is not in bag `{}`",
            bag.id
        )));
    }
    let mut inter = 0u128;
    let mut union = 0u128;
    for inst in &bag.instances {
        let p = predicted.contains(inst.id.as_str());
        let g = inst.is_object();
        let size = u128::from(inst.size_or_default());
        if p && g {
            inter += size;
        }
        if p || g {
            union += size;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of ground-truthed positive bags whose overlap exceeds the
/// threshold. Instances absent from `labels` count as predicted negative.
pub fn average_precision(
    labels: &BTreeMap<InstanceKey, Label>,
    dataset: &Dataset,
    overlap_threshold: f64,
) -> Result<EvalReport> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "overlap threshold must lie in (0, 1], got {overlap_threshold}"
        )));
    }
    if let Some(key) = labels.keys().find(|k| dataset.instance(k).is_none()) {
        return Err(Error::InvalidArgument(format!(
            "labeled instance {key} is not in the dataset"
        )));
    }
    let mut per_bag: Vec<BagResult> = Vec::new();
    let mut detected_count = 0;
    for bag in dataset.positive_bags() {
        let predicted: Vec<&str> = bag
            .instances
            .iter()
            .filter(|i| {
                labels
                    .get(&InstanceKey::new(&bag.id, &i.id))
                    .is_some_and(|l| l.is_positive())
            })
            .map(|i| i.id.as_str())
            .collect();
        detected_count += predicted.len();
        if !bag.has_ground_truth() {
            continue;
        }
        let overlap = bag_overlap(predicted, bag)?;
        per_bag.push(BagResult {
            bag: bag.id.clone(),
            overlap,
            correct: overlap > overlap_threshold,
        });
    }
    if per_bag.is_empty() {
        return Err(Error::Validation(
            "no positive bag carries ground-truth flags".into(),
        ));
    }
    let correct = per_bag.iter().filter(|b| b.correct).count();
    Ok(EvalReport {
        ap: correct as f64 / per_bag.len() as f64,
        per_bag,
        threshold_used: overlap_threshold,
        detected_count,
    })
}

/// Instance-level precision and recall at every distinct score, highest
/// first. An instance without a ground-truth flag counts as a non-object.
pub fn pr_curve(scores: &BTreeMap<InstanceKey, f64>, dataset: &Dataset) -> Result<PrCurve> {
    let mut ranked = Vec::with_capacity(scores.len());
    let mut any_flag = false;
    for (key, &s) in scores {
        let inst = dataset.instance(key).ok_or_else(|| {
            Error::InvalidArgument(format!("scored instance {key} is not in the dataset"))
        })?;
        if !s.is_finite() {
            return Err(Error::NonFiniteScore {
                score: s,
                context: key.to_string(),
            });
        }
        any_flag |= inst.gt.is_some();
        ranked.push((s, inst.is_object()));
    }
    if !any_flag {
        return Err(Error::Validation(
            "no scored instance carries a ground-truth flag".into(),
        ));
    }
    let total_pos = ranked.iter().filter(|(_, g)| *g).count();
    if total_pos == 0 {
        return Err(Error::Validation(
            "recall is undefined: no scored instance is a ground-truth object".into(),
        ));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == t {
            predicted += 1;
            tp += usize::from(ranked[i].1);
            i += 1;
        }
        let precision = if predicted == 0 {
            1.0
        } else {
            tp as f64 / predicted as f64
        };
        points.push(PrPoint {
            threshold: t,
            precision,
            recall: tp as f64 / total_pos as f64,
        });
    }
    Ok(PrCurve { points })
}
