//! Bags, instances and the JSON dataset file.
//!
//! A dataset is a set of weakly labeled bags. Positive bags contain at least
//! one instance of interest, negative bags contain none. Instances carry
//! pre-extracted feature vectors; the optional `size`, `gt` and `neighbors`
//! fields feed evaluation and refinement.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Binary label used for bags and for instance decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// +1.0 or -1.0.
    pub fn sign(self) -> f64 {
        f64::from(self.as_i8())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.as_i8())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_i64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 1 or -1, got {v}")))
    }
}

/// Identifies an instance by its bag id and its id within the bag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub bag: String,
    pub instance: String,
}

impl InstanceKey {
    pub fn new(bag: impl Into<String>, instance: impl Into<String>) -> Self {
        Self {
            bag: bag.into(),
            instance: instance.into(),
        }
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bag, self.instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<Vec<String>>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
            size: None,
            gt: None,
            neighbors: None,
        }
    }

    pub fn with_gt(mut self, gt: bool) -> Self {
        self.gt = Some(gt);
        self
    }

    pub fn with_size(mut self, size: u64) -> Self {
        self.size = Some(size);
        self
    }

    pub fn with_neighbors<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        self.neighbors = Some(ids.into_iter().map(Into::into).collect());
        self
    }

    /// Pixel count, defaulting to 1 so that overlap degrades to segment counting.
    pub fn size_or_default(&self) -> u64 {
        self.size.unwrap_or(1)
    }

    pub fn is_object(&self) -> bool {
        self.gt.unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bag {
    pub id: String,
    pub label: Label,
    pub instances: Vec<Instance>,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: Label, instances: Vec<Instance>) -> Self {
        Self {
            id: id.into(),
            label,
            instances,
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        self.instances.iter().any(|i| i.gt.is_some())
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// On-disk layout: a flat list of bags in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    dimension: usize,
    bags: Vec<Bag>,
}

/// Validated collection of positive and negative bags.
///
/// Instances are addressed in a fixed flat order: all positive-bag
/// instances (bag order, then instance order) followed by all negative-bag
/// instances. Soft labels and score tables use the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dimension: usize,
    positive_bags: Vec<Bag>,
    negative_bags: Vec<Bag>,
}

impl Dataset {
    /// Builds and validates a dataset. Bags are split by label, keeping
    /// their relative order.
    pub fn new(dimension: usize, bags: Vec<Bag>) -> Result<Self> {
        let (positive_bags, negative_bags): (Vec<_>, Vec<_>) =
            bags.into_iter().partition(|b| b.label.is_positive());
        let ds = Self {
            dimension,
            positive_bags,
            negative_bags,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn positive_bags(&self) -> &[Bag] {
        &self.positive_bags
    }

    pub fn negative_bags(&self) -> &[Bag] {
        &self.negative_bags
    }

    pub fn bags(&self) -> impl Iterator<Item = &Bag> {
        self.positive_bags.iter().chain(self.negative_bags.iter())
    }

    pub fn bag(&self, id: &str) -> Option<&Bag> {
        self.bags().find(|b| b.id == id)
    }

    pub fn num_positive_instances(&self) -> usize {
        self.positive_bags.iter().map(|b| b.instances.len()).sum()
    }

    pub fn num_negative_instances(&self) -> usize {
        self.negative_bags.iter().map(|b| b.instances.len()).sum()
    }

    /// Total instance count N.
    pub fn num_instances(&self) -> usize {
        self.num_positive_instances() + self.num_negative_instances()
    }

    pub fn positive_instances(&self) -> impl Iterator<Item = (&Bag, &Instance)> {
        self.positive_bags
            .iter()
            .flat_map(|b| b.instances.iter().map(move |i| (b, i)))
    }

    pub fn negative_instances(&self) -> impl Iterator<Item = (&Bag, &Instance)> {
        self.negative_bags
            .iter()
            .flat_map(|b| b.instances.iter().map(move |i| (b, i)))
    }

    /// All instances in flat order.
    pub fn instances(&self) -> impl Iterator<Item = (&Bag, &Instance)> {
        self.positive_instances().chain(self.negative_instances())
    }

    pub fn positive_features(&self) -> Vec<&[f64]> {
        self.positive_instances()
            .map(|(_, i)| i.features.as_slice())
            .collect()
    }

    pub fn negative_features(&self) -> Vec<&[f64]> {
        self.negative_instances()
            .map(|(_, i)| i.features.as_slice())
            .collect()
    }

    pub fn positive_keys(&self) -> Vec<InstanceKey> {
        self.positive_instances()
            .map(|(b, i)| InstanceKey::new(&b.id, &i.id))
            .collect()
    }

    pub fn keys(&self) -> Vec<InstanceKey> {
        self.instances()
            .map(|(b, i)| InstanceKey::new(&b.id, &i.id))
            .collect()
    }

    pub fn instance(&self, key: &InstanceKey) -> Option<&Instance> {
        self.bag(&key.bag).and_then(|b| b.instance(&key.instance))
    }

    /// Errors unless there is at least one positive and one negative bag.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.positive_bags.is_empty() || self.negative_bags.is_empty() {
            return Err(Error::Validation(format!(
                "annotation needs at least one positive and one negative bag (p = {}, n = {})",
                self.positive_bags.len(),
                self.negative_bags.len()
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mut bag_ids = HashSet::new();
        for bag in self.bags() {
            if !bag_ids.insert(bag.id.as_str()) {
                return Err(Error::Validation(format!("duplicate bag id `{}`", bag.id)));
            }
            if bag.instances.is_empty() {
                return Err(Error::EmptyBag {
                    bag: bag.id.clone(),
                });
            }
            let mut ids = HashSet::new();
            for inst in &bag.instances {
                if !ids.insert(inst.id.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate instance id `{}` in bag `{}`",
                        inst.id, bag.id
                    )));
                }
                if inst.features.len() != self.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.dimension,
                        found: inst.features.len(),
                        context: format!("instance {}/{}", bag.id, inst.id),
                    });
                }
                if let Some(bad) = inst.features.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "non-finite feature {bad} in instance {}/{}",
                        bag.id, inst.id
                    )));
                }
                if inst.size == Some(0) {
                    return Err(Error::Validation(format!(
                        "instance {}/{} has size 0",
                        bag.id, inst.id
                    )));
                }
                if bag.label == Label::Negative && inst.gt == Some(true) {
                    return Err(Error::GroundTruthInNegativeBag {
                        bag: bag.id.clone(),
                        instance: inst.id.clone(),
                    });
                }
            }
        }
        if self.num_instances() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 instances, found {}",
                self.num_instances()
            )));
        }
        Ok(())
    }

    /// Returns a copy with every feature vector scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for bag in out
            .positive_bags
            .iter_mut()
            .chain(out.negative_bags.iter_mut())
        {
            for inst in &mut bag.instances {
                inst.features = l2_normalize(&inst.features).map_err(|_| Error::ZeroVector {
                    context: format!("instance {}/{}", bag.id, inst.id),
                })?;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            dimension: self.dimension,
            bags: self.bags().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Reads, validates and optionally L2-normalizes a dataset file.
pub fn load_dataset(path: &Path, normalize: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, normalize).map_err(|e| match e {
        Error::Parse { source, .. } => Error::Parse {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Same as [`load_dataset`] for in-memory JSON text.
pub fn parse_dataset(text: &str, normalize: bool) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: "<memory>".into(),
        source,
    })?;
    let ds = Dataset::new(file.dimension, file.bags)?;
    if normalize {
        ds.normalized()
    } else {
        Ok(ds)
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    // scale first so that huge or tiny components do not overflow the norm
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Err(Error::ZeroVector {
            context: "l2_normalize".into(),
        });
    }
    let norm = v.iter().map(|x| (x / max) * (x / max)).sum::<f64>().sqrt() * max;
    Ok(v.iter().map(|x| x / norm).collect())
}
