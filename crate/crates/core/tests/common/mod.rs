#![allow(dead_code)]

pub mod gradients;
pub mod oracles;

use dlsm::config::ModelConfig;
use dlsm::trainer::{train, TrainedModel};
use dlsm::{split_edges, DirectedGraph, EdgeSplit, SplitRatios};

/// Two loosely linked directed rings with chords; big enough for a valid split.
pub fn small_graph() -> DirectedGraph {
    let mut edges = Vec::new();
    for block in 0..2 {
        let off = block * 12;
        for i in 0..12 {
            edges.push((off + i, off + (i + 1) % 12));
            edges.push((off + i, off + (i + 5) % 12));
        }
    }
    edges.push((0, 12));
    edges.push((13, 1));
    DirectedGraph::from_edges(24, edges).unwrap()
}

pub fn small_config() -> ModelConfig {
    ModelConfig { encoder_sizes: vec![8, 4], decoder_sizes: vec![3, 4], latent_dim: 2, epochs: 20, ..ModelConfig::default() }
}

pub fn small_run(seed: u64) -> (DirectedGraph, EdgeSplit, TrainedModel) {
    let g = small_graph();
    let split = split_edges(&g, SplitRatios::default(), seed).unwrap();
    let cfg = ModelConfig { seed, ..small_config() };
    let tm = train(&g, &split, &cfg).unwrap();
    (g, split, tm)
}
