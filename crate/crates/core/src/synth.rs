//! Synthetic directed graphs for tests and desk-scale protocol runs.

use rand::Rng as _;
use rand_distr::{Distribution, Pareto};

use crate::error::Result;
use crate::graph::DirectedGraph;
use crate::rng::substream;

/// Graph with ground-truth block labels.
#[derive(Debug, Clone)]
pub struct Labelled {
    pub graph: DirectedGraph,
    pub labels: Vec<usize>,
}

/// Directed planted partition: `k` equal blocks, edge probability `p_in` inside a block
/// and `p_out` across.
pub fn planted_partition(n: usize, k: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Labelled> {
    let mut rng = substream(seed, "planted");
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if i != j && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Labelled { graph: DirectedGraph::from_edges(n, edges)?, labels })
}

/// Power-law node weights with tail exponent `exponent` (density `∝ w^(−exponent)`),
/// scaled to mean 1.
fn power_law_weights(n: usize, exponent: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let pareto = Pareto::new(1.0, exponent - 1.0).expect("exponent > 1");
    let w: Vec<f64> = (0..n).map(|_| pareto.sample(rng).min(n as f64)).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    w.into_iter().map(|x| x / mean).collect()
}

/// Degree-corrected directed block model. Out- and in-propensities are independent
/// power laws; `mixing` is the share of each node's expected out-degree that leaves its
/// block. The expected edge count is about `n · avg_degree`.
pub fn degree_corrected_blocks(
    n: usize,
    k: usize,
    avg_degree: f64,
    exponent: f64,
    mixing: f64,
    seed: u64,
) -> Result<Labelled> {
    let mut rng = substream(seed, "dcsbm");
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let w_out = power_law_weights(n, exponent, &mut rng);
    let w_in = power_law_weights(n, exponent, &mut rng);
    let mut in_mass = vec![0.0; k];
    for j in 0..n {
        in_mass[labels[j]] += w_in[j];
    }
    let total_in: f64 = in_mass.iter().sum();
    let mut edges = Vec::new();
    for i in 0..n {
        let bi = labels[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let bj = labels[j];
            let share = if bi == bj { (1.0 - mixing) / in_mass[bj] } else { mixing / (total_in - in_mass[bi]) };
            let p = (avg_degree * w_out[i] * w_in[j] * share).min(1.0);
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Labelled { graph: DirectedGraph::from_edges(n, edges)?, labels })
}

/// Directed Chung–Lu graph with power-law out- and in-propensities of tail `exponent`.
pub fn directed_power_law(n: usize, avg_degree: f64, exponent: f64, seed: u64) -> Result<DirectedGraph> {
    Ok(degree_corrected_blocks(n, 1, avg_degree, exponent, 0.0, seed)?.graph)
}
