//! Second-round voting over the region adjacency graph.
//!
//! Each instance's score is blended with the mean score of its closed
//! neighbourhood (the instance and its neighbours) in a single pass:
//! `s' = (1 - alpha) s + alpha mean(s, neighbours)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::data::{Dataset, InstanceKey};
use crate::ekde::ScoreTable;
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Undirected neighbour relation of one bag, by instance index.
#[derive(Debug, Clone, PartialEq)]
pub struct BagGraph {
    ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl BagGraph {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn neighbors_of(&self, id: &str) -> Option<Vec<&str>> {
        let idx = self.ids.iter().position(|i| i == id)?;
        Some(
            self.neighbors[idx]
                .iter()
                .map(|&j| self.ids[j].as_str())
                .collect(),
        )
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyGraph {
    bags: BTreeMap<String, BagGraph>,
}

impl AdjacencyGraph {
    pub fn bag(&self, id: &str) -> Option<&BagGraph> {
        self.bags.get(id)
    }

    pub fn edge_count(&self) -> usize {
        self.bags.values().map(BagGraph::edge_count).sum()
    }

    pub fn contains(&self, key: &InstanceKey) -> bool {
        self.bags
            .get(&key.bag)
            .is_some_and(|g| g.ids.contains(&key.instance))
    }

    pub fn neighbors(&self, key: &InstanceKey) -> Option<Vec<InstanceKey>> {
        let g = self.bags.get(&key.bag)?;
        let ids = g.neighbors_of(&key.instance)?;
        Some(
            ids.into_iter()
                .map(|i| InstanceKey::new(&key.bag, i))
                .collect(),
        )
    }
}

/// Builds the symmetrized, de-duplicated neighbour graph from the instances'
/// `neighbors` lists. Self references are dropped; instances without
/// neighbour data are isolated vertices.
pub fn build_adjacency(dataset: &Dataset) -> Result<AdjacencyGraph> {
    let mut bags = BTreeMap::new();
    for bag in dataset.bags() {
        let index: HashMap<&str, usize> = bag
            .instances
            .iter()
            .enumerate()
            .map(|(j, i)| (i.id.as_str(), j))
            .collect();
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); bag.instances.len()];
        for (j, inst) in bag.instances.iter().enumerate() {
            for other in inst.neighbors.iter().flatten() {
                let &k = index.get(other.as_str()).ok_or_else(|| {
                    Error::Validation(format!(
                        "instance {}/{} lists neighbour `{other}`, which is not in bag `{}`",
                        bag.id, inst.id, bag.id
                    ))
                })?;
                if k != j {
                    sets[j].insert(k);
                    sets[k].insert(j);
                }
            }
        }
        bags.insert(
            bag.id.clone(),
            BagGraph {
                ids: bag.instances.iter().map(|i| i.id.clone()).collect(),
                neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            },
        );
    }
    Ok(AdjacencyGraph { bags })
}

/// One blending pass; labels are re-derived from the new scores.
pub fn refine_scores(
    scores: &ScoreTable,
    graph: &AdjacencyGraph,
    alpha: f64,
) -> Result<ScoreTable> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let lookup: HashMap<&InstanceKey, f64> =
        scores.entries.iter().map(|e| (&e.key, e.score)).collect();
    let refined = par::try_map_range(scores.entries.len(), |i| {
        let entry = &scores.entries[i];
        let neighbors = graph.neighbors(&entry.key).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} is not a vertex of the adjacency graph",
                entry.key
            ))
        })?;
        if neighbors.is_empty() || alpha == 0.0 {
            return Ok(entry.score);
        }
        // written as a shift so that a constant neighbourhood is exact
        let mut shift = 0.0;
        for n in &neighbors {
            let s = lookup.get(n).ok_or_else(|| {
                Error::InvalidArgument(format!("neighbour {n} of {} has no score", entry.key))
            })?;
            shift += s - entry.score;
        }
        Ok(entry.score + alpha * shift / (neighbors.len() + 1) as f64)
    })?;
    ScoreTable::from_scores(
        scores
            .entries
            .iter()
            .zip(refined)
            .map(|(e, s)| (e.key.clone(), e.in_positive_bag, s)),
    )
}
