//! Train/validation/test edge splits with matched negative samples.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DlsmError, Result};
use crate::graph::DirectedGraph;
use crate::rng;

pub type Edge = (usize, usize);

/// Fractions of the edge set assigned to each part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.85, test: 0.10, val: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

impl EdgeSplit {
    /// Short content digest identifying this split in reports.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("split serialises");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Union of all positive parts, sorted.
    pub fn all_positives(&self) -> Vec<Edge> {
        let mut all: Vec<Edge> =
            self.train_pos.iter().chain(&self.val_pos).chain(&self.test_pos).copied().collect();
        all.sort_unstable();
        all
    }

    /// Graph restricted to training positives; held-out edges become unknown non-edges.
    pub fn train_graph(&self, g: &DirectedGraph) -> Result<DirectedGraph> {
        g.with_edge_subset(self.train_pos.iter().copied())
    }

    pub fn test_pairs(&self) -> (Vec<Edge>, Vec<bool>) {
        labelled(&self.test_pos, &self.test_neg)
    }

    pub fn val_pairs(&self) -> (Vec<Edge>, Vec<bool>) {
        labelled(&self.val_pos, &self.val_neg)
    }
}

fn labelled(pos: &[Edge], neg: &[Edge]) -> (Vec<Edge>, Vec<bool>) {
    let pairs = pos.iter().chain(neg).copied().collect();
    let labels = std::iter::repeat_n(true, pos.len()).chain(std::iter::repeat_n(false, neg.len())).collect();
    (pairs, labels)
}

/// Uniformly partitions the edges of `g` and samples as many non-edges as there are held-out
/// positives. Deterministic in `(g, ratios, seed)`.
pub fn split_edges(g: &DirectedGraph, ratios: SplitRatios, seed: u64) -> Result<EdgeSplit> {
    let SplitRatios { train, test, val } = ratios;
    if [train, test, val].iter().any(|r| !(0.0..=1.0).contains(r)) || ((train + test + val) - 1.0).abs() > 1e-9 {
        return Err(DlsmError::InvalidRatios(format!("({train}, {test}, {val}) must be in [0,1] and sum to 1")));
    }
    let m = g.m();
    let n_test = (test * m as f64).round() as usize;
    let n_val = (val * m as f64).round() as usize;
    if n_test == 0 || n_val == 0 || n_test + n_val >= m {
        return Err(DlsmError::InvalidRatios(format!(
            "{m} edges give {n_test} test / {n_val} validation / {} train positives; each part needs at least one",
            m.saturating_sub(n_test + n_val)
        )));
    }

    let mut rng = rng::substream(seed, "split");
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let test_pos = edges[..n_test].to_vec();
    let val_pos = edges[n_test..n_test + n_val].to_vec();
    let train_pos = edges[n_test + n_val..].to_vec();

    let mut negatives = sample_non_edges(g, n_test + n_val, &mut rng)?;
    let val_neg = negatives.split_off(n_test);
    let test_neg = negatives;
    Ok(EdgeSplit { train_pos, val_pos, test_pos, val_neg, test_neg, seed })
}

/// Draws `count` distinct ordered pairs `(i, j)`, `i != j`, absent from the full edge set.
pub fn sample_non_edges(g: &DirectedGraph, count: usize, rng: &mut rng::Rng) -> Result<Vec<Edge>> {
    let n = g.n();
    let available = (n * n.saturating_sub(1)).saturating_sub(g.m());
    if count > available {
        return Err(DlsmError::SamplingExhausted { requested: count, available });
    }
    if count * 2 > available {
        // dense regime: rejection would stall, enumerate the complement instead
        let mut pool: Vec<Edge> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !g.has_edge(i, j))
            .collect();
        pool.shuffle(rng);
        pool.truncate(count);
        return Ok(pool);
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || g.has_edge(i, j) || !seen.insert((i, j)) {
            continue;
        }
        out.push((i, j));
    }
    Ok(out)
}
