//! Independent reference implementations used by the integration tests.
//!
//! Everything here works on plain vectors and recomputes quantities from
//! their definitions, without touching the library's evaluators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ekde_core::{Bag, Dataset, Instance, InstanceKey, Label};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn kernel(x: &[f64], y: &[f64], sigma: f64, normalized: bool) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let k = (-d2 / (2.0 * sigma * sigma)).exp();
    if normalized {
        k / (2.0 * std::f64::consts::PI * sigma * sigma).powf(x.len() as f64 / 2.0)
    } else {
        k
    }
}

/// Raw bags: features only, positives then negatives.
#[derive(Debug, Clone)]
pub struct Toy {
    pub dimension: usize,
    pub pos: Vec<Vec<Vec<f64>>>,
    pub neg: Vec<Vec<Vec<f64>>>,
}

impl Toy {
    pub fn random(
        r: &mut ChaCha8Rng,
        max_pos_bags: usize,
        max_neg_bags: usize,
        max_size: usize,
        max_dim: usize,
    ) -> Self {
        let dimension = r.random_range(1..=max_dim);
        let mut bags = |max_bags: usize| -> Vec<Vec<Vec<f64>>> {
            (0..r.random_range(1..=max_bags))
                .map(|_| {
                    (0..r.random_range(1..=max_size))
                        .map(|_| (0..dimension).map(|_| r.random_range(-2.0..2.0)).collect())
                        .collect()
                })
                .collect()
        };
        let pos = bags(max_pos_bags);
        let neg = bags(max_neg_bags);
        Toy {
            dimension,
            pos,
            neg,
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let raw = |bags: &[Bag]| -> Vec<Vec<Vec<f64>>> {
            bags.iter()
                .map(|b| b.instances.iter().map(|i| i.features.clone()).collect())
                .collect()
        };
        Toy {
            dimension: ds.dimension(),
            pos: raw(ds.positive_bags()),
            neg: raw(ds.negative_bags()),
        }
    }

    pub fn positives(&self) -> Vec<&[f64]> {
        self.pos.iter().flatten().map(Vec::as_slice).collect()
    }

    pub fn negatives(&self) -> Vec<&[f64]> {
        self.neg.iter().flatten().map(Vec::as_slice).collect()
    }

    pub fn total(&self) -> usize {
        self.positives().len() + self.negatives().len()
    }

    pub fn dataset(&self) -> Dataset {
        let mk = |prefix: &str, label: Label, bags: &[Vec<Vec<f64>>]| -> Vec<Bag> {
            bags.iter()
                .enumerate()
                .map(|(b, insts)| {
                    let insts = insts
                        .iter()
                        .enumerate()
                        .map(|(i, f)| Instance::new(format!("i{i}"), f.clone()))
                        .collect();
                    Bag::new(format!("{prefix}{b}"), label, insts)
                })
                .collect()
        };
        let mut bags = mk("p", Label::Positive, &self.pos);
        bags.extend(mk("n", Label::Negative, &self.neg));
        Dataset::new(self.dimension, bags).expect("toy dataset is valid")
    }

    pub fn random_w(&self, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.positives().len())
            .map(|_| r.random_range(0.0..=1.0))
            .collect()
    }
}

pub fn priors(n_pos: usize, n_neg: usize, w: &[f64]) -> (f64, f64) {
    let n = (n_pos + n_neg) as f64;
    let mass: f64 = w.iter().sum();
    let uncertain: f64 = w.iter().map(|v| 1.0 - v).sum();
    (mass / n, (n_neg as f64 + uncertain) / n)
}

/// Soft-weighted class densities at `x`.
pub fn densities(
    x: &[f64],
    toy: &Toy,
    w: &[f64],
    sp: f64,
    sn: f64,
    normalized: bool,
) -> (f64, f64) {
    let pos = toy.positives();
    let neg = toy.negatives();
    let mut num_pos = 0.0;
    let mut den_pos = 0.0;
    let mut num_neg = 0.0;
    let mut den_neg = neg.len() as f64;
    for (p, &wt) in pos.iter().zip(w) {
        num_pos += wt * kernel(x, p, sp, normalized);
        den_pos += wt;
        num_neg += (1.0 - wt) * kernel(x, p, sn, normalized);
        den_neg += 1.0 - wt;
    }
    for q in &neg {
        num_neg += kernel(x, q, sn, normalized);
    }
    (num_pos / den_pos, num_neg / den_neg)
}

/// Ordinary kernel density estimate: the mean kernel over `points`.
pub fn plain_kde(x: &[f64], points: &[&[f64]], sigma: f64, normalized: bool) -> f64 {
    points
        .iter()
        .map(|p| kernel(x, p, sigma, normalized))
        .sum::<f64>()
        / points.len() as f64
}

/// `N [p(x|+1) p(+1) - p(x|-1) p(-1)]` from the density formulas.
pub fn posterior_difference(x: &[f64], toy: &Toy, w: &[f64], sp: f64, sn: f64) -> f64 {
    let (pp, pn) = densities(x, toy, w, sp, sn, true);
    let (p1, pm1) = priors(toy.positives().len(), toy.negatives().len(), w);
    toy.total() as f64 * (pp * p1 - pn * pm1)
}

/// Every instance votes for its own label with weight `w` (or 1 for
/// negatives): `sum_pos w s - sum_neg s - sum_pos (1 - w) s`.
pub fn direct_vote(x: &[f64], toy: &Toy, w: &[f64], sigma: f64, normalized: bool) -> f64 {
    let mut total = 0.0;
    for (p, &wt) in toy.positives().iter().zip(w) {
        let s = kernel(x, p, sigma, normalized);
        total += wt * s - (1.0 - wt) * s;
    }
    for q in toy.negatives() {
        total -= kernel(x, q, sigma, normalized);
    }
    total
}

/// One synchronous posterior update of every positive-bag soft label.
pub fn update(toy: &Toy, w: &[f64], sp: f64, sn: f64) -> Vec<f64> {
    let (p1, pm1) = priors(toy.positives().len(), toy.negatives().len(), w);
    toy.positives()
        .iter()
        .map(|x| {
            let (pp, pn) = densities(x, toy, w, sp, sn, true);
            let a = pp * p1;
            let b = pn * pm1;
            if a + b == 0.0 {
                0.5
            } else {
                a / (a + b)
            }
        })
        .collect()
}

/// NegMin score by trying every way of picking one instance per negative
/// bag and keeping the smallest objective.
pub fn negmin_brute_force(x: &[f64], neg_bags: &[Vec<Vec<f64>>], sigma: f64) -> f64 {
    let mut choice = vec![0usize; neg_bags.len()];
    let mut best = f64::INFINITY;
    loop {
        let obj: f64 = neg_bags
            .iter()
            .zip(&choice)
            .map(|(bag, &j)| -kernel(x, &bag[j], sigma, false))
            .sum();
        best = best.min(obj);
        let mut b = 0;
        loop {
            if b == neg_bags.len() {
                return best;
            }
            choice[b] += 1;
            if choice[b] < neg_bags[b].len() {
                break;
            }
            choice[b] = 0;
            b += 1;
        }
    }
}

/// CRANE penalties from nearest positive-bag neighbours, ties included.
pub fn crane_oracle(toy: &Toy, sigma: f64) -> (Vec<f64>, bool) {
    let pos = toy.positives();
    let mut scores = vec![0.0; pos.len()];
    let mut any_tie = false;
    for q in toy.negatives() {
        let sims: Vec<f64> = pos.iter().map(|p| kernel(q, p, sigma, false)).collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..pos.len()).filter(|&t| sims[t] == max).collect();
        any_tie |= winners.len() > 1;
        for t in winners {
            scores[t] -= 1.0;
        }
    }
    (scores, any_tie)
}

/// Size-weighted IoU of two id sets within `bag`.
pub fn overlap(bag: &Bag, predicted: &[&str]) -> f64 {
    let size = |id: &str| bag.instance(id).unwrap().size.unwrap_or(1) as f64;
    let gt: Vec<&str> = bag
        .instances
        .iter()
        .filter(|i| i.gt == Some(true))
        .map(|i| i.id.as_str())
        .collect();
    if gt.is_empty() && predicted.is_empty() {
        return 1.0;
    }
    let inter: f64 = predicted
        .iter()
        .filter(|p| gt.contains(p))
        .map(|p| size(p))
        .sum();
    let mut union: f64 = gt.iter().map(|g| size(g)).sum();
    union += predicted
        .iter()
        .filter(|p| !gt.contains(p))
        .map(|p| size(p))
        .sum::<f64>();
    inter / union
}

/// Fraction of positive bags with ground truth whose overlap beats `thr`.
pub fn ap_recount(ds: &Dataset, labels: &BTreeMap<InstanceKey, Label>, thr: f64) -> f64 {
    let mut correct = 0;
    let mut counted = 0;
    for bag in ds.positive_bags() {
        if !bag.instances.iter().any(|i| i.gt.is_some()) {
            continue;
        }
        counted += 1;
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
        if overlap(bag, &predicted) > thr {
            correct += 1;
        }
    }
    correct as f64 / counted as f64
}

/// `(threshold, precision, recall)` at every distinct score, from a full
/// confusion count per threshold.
pub fn pr_brute_force(ds: &Dataset, scores: &BTreeMap<InstanceKey, f64>) -> Vec<(f64, f64, f64)> {
    let is_obj = |k: &InstanceKey| ds.instance(k).unwrap().gt == Some(true);
    let mut thresholds: Vec<f64> = scores.values().copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total = scores.keys().filter(|k| is_obj(k)).count() as f64;
    thresholds
        .into_iter()
        .map(|t| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (k, &s) in scores {
                if s >= t {
                    if is_obj(k) {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
            (t, precision, tp / total)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Three positive bags with sizes and flags, plus one negative bag.
///
/// Bag `A`: a (3, object), b (1, object), c (4). Bag `B`: d (2, object),
/// e (2). Bag `C`: f (1), g (5, object).
pub fn eval_fixture() -> Dataset {
    let inst =
        |id: &str, size: u64, gt: bool| Instance::new(id, vec![0.0]).with_size(size).with_gt(gt);
    Dataset::new(
        1,
        vec![
            Bag::new(
                "A",
                Label::Positive,
                vec![inst("a", 3, true), inst("b", 1, true), inst("c", 4, false)],
            ),
            Bag::new(
                "B",
                Label::Positive,
                vec![inst("d", 2, true), inst("e", 2, false)],
            ),
            Bag::new(
                "C",
                Label::Positive,
                vec![inst("f", 1, false), inst("g", 5, true)],
            ),
            Bag::new("N", Label::Negative, vec![Instance::new("z", vec![1.0])]),
        ],
    )
    .expect("fixture is valid")
}

/// Predicts `{a, c}`, `{d}` and `{f}`: overlaps 3/8, 1 and 0.
pub fn eval_fixture_labels() -> BTreeMap<InstanceKey, Label> {
    let positive = ["A/a", "A/c", "B/d", "C/f"];
    ["A/a", "A/b", "A/c", "B/d", "B/e", "C/f", "C/g"]
        .iter()
        .map(|k| {
            let (bag, inst) = k.split_once('/').unwrap();
            let label = if positive.contains(k) {
                Label::Positive
            } else {
                Label::Negative
            };
            (InstanceKey::new(bag, inst), label)
        })
        .collect()
}

/// Scores whose sweep is, by hand:
///
/// | t   | predicted         | P   | R    |
/// |-----|-------------------|-----|------|
/// | 0.9 | a                 | 1   | 1/4  |
/// | 0.8 | a d               | 1   | 1/2  |
/// | 0.7 | a d c f           | 1/2 | 1/2  |
/// | 0.4 | a d c f b         | 3/5 | 3/4  |
/// | 0.2 | a d c f b g       | 2/3 | 1    |
/// | 0.1 | all seven         | 4/7 | 1    |
pub fn eval_fixture_scores() -> BTreeMap<InstanceKey, f64> {
    [
        ("A", "a", 0.9),
        ("A", "b", 0.4),
        ("A", "c", 0.7),
        ("B", "d", 0.8),
        ("B", "e", 0.1),
        ("C", "f", 0.7),
        ("C", "g", 0.2),
    ]
    .iter()
    .map(|(b, i, s)| (InstanceKey::new(*b, *i), *s))
    .collect()
}

pub const EVAL_FIXTURE_PR: [(f64, f64, f64); 6] = [
    (0.9, 1.0, 0.25),
    (0.8, 1.0, 0.5),
    (0.7, 0.5, 0.5),
    (0.4, 0.6, 0.75),
    (0.2, 4.0 / 6.0, 1.0),
    (0.1, 4.0 / 7.0, 1.0),
];

/// In-sample `sum |p(x|1)p(1) - p(x|-1)p(-1)|` over every instance at
/// `w = 1`, with `sum (p(x|1)p(1) + p(x|-1)p(-1))` as the scale that
/// rounding error is measured against.
pub fn density_difference(toy: &Toy, sp: f64, sn: f64) -> (f64, f64) {
    let w = vec![1.0; toy.positives().len()];
    let (p1, pm1) = priors(toy.positives().len(), toy.negatives().len(), &w);
    toy.positives()
        .into_iter()
        .chain(toy.negatives())
        .map(|x| {
            let (pp, pn) = densities(x, toy, &w, sp, sn, true);
            ((pp * p1 - pn * pm1).abs(), pp * p1 + pn * pm1)
        })
        .fold((0.0, 0.0), |(d, s), (a, b)| (d + a, s + b))
}

/// Soft labels from iterating [`update`] from `w = 1`; `None` when the
/// positive mass collapses or the iteration does not settle.
pub fn iterate(toy: &Toy, sp: f64, sn: f64, epsilon: f64, max_iter: usize) -> Option<Vec<f64>> {
    let mut w = vec![1.0; toy.positives().len()];
    for _ in 0..max_iter {
        if w.iter().sum::<f64>() <= 1e-12 {
            return None;
        }
        let next = update(toy, &w, sp, sn);
        let delta = w
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if delta < epsilon {
            return (w.iter().sum::<f64>() > 1e-12).then_some(w);
        }
    }
    None
}

/// Posterior margin at every instance with that instance left out of both
/// densities (the class masses cancel against the priors).
pub fn leave_one_out_margins(toy: &Toy, w: &[f64], sp: f64, sn: f64) -> Vec<f64> {
    let pos = toy.positives();
    let neg = toy.negatives();
    let all: Vec<&[f64]> = pos.iter().chain(&neg).copied().collect();
    (0..all.len())
        .map(|q| {
            let x = all[q];
            let mut a = 0.0;
            let mut b = 0.0;
            for (t, y) in all.iter().enumerate() {
                if t == q {
                    continue;
                }
                if t < pos.len() {
                    a += w[t] * kernel(x, y, sp, true);
                    b += (1.0 - w[t]) * kernel(x, y, sn, true);
                } else {
                    b += kernel(x, y, sn, true);
                }
            }
            if a + b == 0.0 {
                0.0
            } else {
                (a - b) / (a + b)
            }
        })
        .collect()
}

/// Mean over positive bags of the best leave-one-out margin, minus the
/// mean margin over negative-bag instances.
pub fn bag_agreement(toy: &Toy, w: &[f64], sp: f64, sn: f64) -> f64 {
    let m = leave_one_out_margins(toy, w, sp, sn);
    let mut offset = 0;
    let mut best = 0.0;
    for bag in &toy.pos {
        best += m[offset..offset + bag.len()]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        offset += bag.len();
    }
    let neg = &m[offset..];
    best / toy.pos.len() as f64 - neg.iter().sum::<f64>() / neg.len() as f64
}

/// Grid argmax: first pair (positive bandwidth outer) within `tol`
/// relative of the best score.
pub fn grid_argmax(scores: &[((f64, f64), Option<f64>)], tol: f64) -> Option<(f64, f64)> {
    let max = scores
        .iter()
        .filter_map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let cut = max - tol * max.abs().max(1.0);
    scores
        .iter()
        .find(|(_, s)| s.is_some_and(|s| s >= cut))
        .map(|(p, _)| *p)
}
