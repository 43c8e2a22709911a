//! Seeded two-cluster generator with known instance-level ground truth.
//!
//! Background instances are drawn from `N(-s/2 e1, I)` and witnesses from
//! `N(+s/2 e1, I)`, where `s` is the separation. Each positive bag holds a
//! contiguous run of witnesses at a random offset, so chain adjacency links
//! witnesses to each other.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Instance, InstanceKey, Label};
use crate::error::{Error, Result};
use crate::io::write_json_atomic;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dimension: usize,
    pub n_pos_bags: usize,
    pub n_neg_bags: usize,
    pub bag_size: usize,
    pub witness_rate: f64,
    pub separation: f64,
    #[serde(default)]
    pub noise_rate: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub chain_adjacency: bool,
}

impl SynthConfig {
    /// The quantitative benchmark: D = 5, 10 + 10 bags of 8, a quarter of
    /// each positive bag are witnesses, centers 8 std apart.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            dimension: 5,
            n_pos_bags: 10,
            n_neg_bags: 10,
            bag_size: 8,
            witness_rate: 0.25,
            separation: 8.0,
            noise_rate: 0.0,
            seed,
            chain_adjacency: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("dimension", self.dimension),
            ("n_pos_bags", self.n_pos_bags),
            ("n_neg_bags", self.n_neg_bags),
            ("bag_size", self.bag_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return bad(format!(
                "witness_rate must lie in (0, 1], got {}",
                self.witness_rate
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!(
                "separation must be finite and non-negative, got {}",
                self.separation
            ));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate < 1.0) {
            return bad(format!(
                "noise_rate must lie in [0, 1), got {}",
                self.noise_rate
            ));
        }
        Ok(())
    }

    pub fn witnesses_per_bag(&self) -> usize {
        ((self.witness_rate * self.bag_size as f64).ceil() as usize).clamp(1, self.bag_size)
    }

    pub fn contaminated_count(&self) -> usize {
        (self.noise_rate * (self.n_neg_bags * self.bag_size) as f64).round() as usize
    }
}

/// What the generator knows and the dataset file cannot carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub witnesses: Vec<InstanceKey>,
    /// Negative-bag instances drawn from the positive cluster; their `gt`
    /// stays false.
    pub contaminated: Vec<InstanceKey>,
}

impl GroundTruth {
    pub fn is_witness(&self, key: &InstanceKey) -> bool {
        self.witnesses.binary_search(key).is_ok()
    }

    /// Fraction of positive-bag instances whose label matches `predicted`.
    /// Missing predictions count as -1.
    pub fn accuracy(
        &self,
        dataset: &Dataset,
        predicted: &std::collections::BTreeMap<InstanceKey, Label>,
    ) -> f64 {
        let keys = dataset.positive_keys();
        let hits = keys
            .iter()
            .filter(|k| {
                let p = predicted.get(k).copied().unwrap_or(Label::Negative);
                p.is_positive() == self.is_witness(k)
            })
            .count();
        hits as f64 / keys.len() as f64
    }
}

fn pad(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(2)
}

fn draw(rng: &mut ChaCha8Rng, dimension: usize, center: f64) -> Vec<f64> {
    (0..dimension)
        .map(|d| {
            let z: f64 = rng.sample(StandardNormal);
            if d == 0 {
                z + center
            } else {
                z
            }
        })
        .collect()
}

fn chain(bag: &mut [Instance]) {
    let ids: Vec<String> = bag.iter().map(|i| i.id.clone()).collect();
    for (j, inst) in bag.iter_mut().enumerate() {
        let mut n = Vec::new();
        if j > 0 {
            n.push(ids[j - 1].clone());
        }
        if j + 1 < ids.len() {
            n.push(ids[j + 1].clone());
        }
        inst.neighbors = Some(n);
    }
}

pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = config.separation / 2.0;
    let m = config.witnesses_per_bag();
    let iw = pad(config.bag_size);
    let inst_id = |j: usize| format!("s{j:0iw$}");

    let mut bags = Vec::with_capacity(config.n_pos_bags + config.n_neg_bags);
    let mut witnesses = Vec::new();
    let pw = pad(config.n_pos_bags);
    for b in 0..config.n_pos_bags {
        let id = format!("pos-{b:0pw$}");
        let offset = rng.random_range(0..=config.bag_size - m);
        let mut insts: Vec<Instance> = (0..config.bag_size)
            .map(|j| {
                let is_witness = (offset..offset + m).contains(&j);
                if is_witness {
                    witnesses.push(InstanceKey::new(&id, inst_id(j)));
                }
                let center = if is_witness { half } else { -half };
                Instance::new(inst_id(j), draw(&mut rng, config.dimension, center))
                    .with_gt(is_witness)
            })
            .collect();
        if config.chain_adjacency {
            chain(&mut insts);
        }
        bags.push(Bag::new(id, Label::Positive, insts));
    }

    let n_neg = config.n_neg_bags * config.bag_size;
    let mut noisy = vec![false; n_neg];
    for i in sample(&mut rng, n_neg, config.contaminated_count()) {
        noisy[i] = true;
    }
    let mut contaminated = Vec::new();
    let nw = pad(config.n_neg_bags);
    for b in 0..config.n_neg_bags {
        let id = format!("neg-{b:0nw$}");
        let mut insts: Vec<Instance> = (0..config.bag_size)
            .map(|j| {
                let flat = b * config.bag_size + j;
                if noisy[flat] {
                    contaminated.push(InstanceKey::new(&id, inst_id(j)));
                }
                let center = if noisy[flat] { half } else { -half };
                Instance::new(inst_id(j), draw(&mut rng, config.dimension, center)).with_gt(false)
            })
            .collect();
        if config.chain_adjacency {
            chain(&mut insts);
        }
        bags.push(Bag::new(id, Label::Negative, insts));
    }

    witnesses.sort();
    contaminated.sort();
    let dataset = Dataset::new(config.dimension, bags)?;
    Ok((
        dataset,
        GroundTruth {
            config: config.clone(),
            witnesses,
            contaminated,
        },
    ))
}

/// `data.json` -> `data.truth.json`, next to the dataset.
pub fn truth_path(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    dataset_path.with_file_name(format!("{stem}.truth.json"))
}

/// Writes the dataset and its ground-truth sidecar; returns the sidecar path.
pub fn write_files(dataset: &Dataset, truth: &GroundTruth, dataset_path: &Path) -> Result<PathBuf> {
    dataset.save(dataset_path)?;
    let side = truth_path(dataset_path);
    write_json_atomic(&side, truth)?;
    Ok(side)
}
