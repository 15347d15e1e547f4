//! Deep latent space model for directed graphs.
//!
//! A directed GCN encoder feeds a hierarchical stochastic decoder that samples latent positions,
//! relaxed community memberships and Dirichlet node random factors layer by layer. The output
//! layer reconstructs the adjacency matrix with a degree-heterogeneous latent space model.
//! Training maximises the evidence lower bound with reparameterized gradients.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rng;
pub mod sparse;
pub mod special;
pub mod split;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{DlsmError, Result};
pub use graph::{load_edge_list, preprocess, DirectedGraph};
pub use split::{split_edges, EdgeSplit, SplitRatios};
pub use stats::{descriptive_stats, GraphStats};
