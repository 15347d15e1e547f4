//! Directed GCN encoder.
//!
//! Each layer computes `H⁽ˡ⁺¹⁾ = f(Â H⁽ˡ⁾ W⁽ˡ⁾)` with the directed normalisation
//! `Â = D̃_out^{-1/2} (A + I) D̃_in^{-1/2}`, where `D̃_out` and `D̃_in` hold the row and column
//! sums of `A + I`.

use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Activation, Mat, SparseOperator, Tape, Var};
use crate::error::{DlsmError, Result};
use crate::graph::DirectedGraph;
use crate::sparse::Csr;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    op: Arc<SparseOperator>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Csr {
        &self.op.forward
    }

    pub fn operator(&self) -> &Arc<SparseOperator> {
        &self.op
    }

    pub fn n(&self) -> usize {
        self.op.forward.shape().0
    }
}

pub fn normalize_adjacency(g: &DirectedGraph) -> NormalizedAdjacency {
    let n = g.n();
    let mut out_deg = vec![1.0f64; n];
    let mut in_deg = vec![1.0; n];
    let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for &(i, j) in g.edges() {
        if i == j {
            continue;
        }
        out_deg[i] += 1.0;
        in_deg[j] += 1.0;
        trip.push((i, j, 1.0));
    }
    for t in &mut trip {
        t.2 /= (out_deg[t.0] * in_deg[t.1]).sqrt();
    }
    NormalizedAdjacency { op: Arc::new(SparseOperator::new(Csr::from_triplets(n, n, trip))) }
}

/// One layer `f(Â H W)` on plain matrices.
pub fn gcn_layer(adj: &NormalizedAdjacency, h: &Mat, w: &Mat, f: Activation) -> Result<Mat> {
    if h.nrows() != adj.n() || h.ncols() != w.nrows() {
        return Err(DlsmError::Shape {
            op: "gcn_layer",
            detail: format!("Â is {0}x{0}, H is {1:?}, W is {2:?}", adj.n(), h.dim(), w.dim()),
        });
    }
    let ah = adj.matrix().matmul(h.view());
    Ok(ah.dot(w).mapv(|x| f.apply(x)))
}

/// Encoder weights `W⁽⁰⁾ … W⁽ᴸ⁻¹⁾` and the shared activation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub weights: Vec<Mat>,
    pub activation: Activation,
}

impl EncoderStack {
    pub fn new(weights: Vec<Mat>, activation: Activation) -> Result<Self> {
        for (l, w) in weights.windows(2).enumerate() {
            if w[0].ncols() != w[1].nrows() {
                return Err(DlsmError::Shape {
                    op: "EncoderStack",
                    detail: format!("layer {l} outputs {} columns, layer {} expects {}", w[0].ncols(), l + 1, w[1].nrows()),
                });
            }
        }
        if weights.iter().any(|w| w.iter().any(|x| !x.is_finite())) {
            return Err(DlsmError::NonFinite { term: "encoder weights".into(), layer: 0 });
        }
        Ok(EncoderStack { weights, activation })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.weights.iter().map(|w| w.ncols()).collect()
    }
}

/// The input features `H⁽⁰⁾`: node attributes when present, otherwise the identity.
pub fn input_features(g: &DirectedGraph) -> Mat {
    match g.attributes() {
        Some(x) => x.clone(),
        None => Array2::eye(g.n()),
    }
}

/// Width of `H⁽⁰⁾`.
pub fn input_dim(g: &DirectedGraph) -> usize {
    g.attributes().map_or(g.n(), |x| x.ncols())
}

/// Forward pass on plain matrices, one hidden state per encoder layer.
pub fn encode(g: &DirectedGraph, stack: &EncoderStack) -> Result<Vec<Mat>> {
    let adj = normalize_adjacency(g);
    let mut h = input_features(g);
    let mut out = Vec::with_capacity(stack.weights.len());
    for (l, w) in stack.weights.iter().enumerate() {
        h = gcn_layer(&adj, &h, w, stack.activation)?;
        if h.iter().any(|x| !x.is_finite()) {
            return Err(DlsmError::NonFinite { term: "encoder activation".into(), layer: l + 1 });
        }
        out.push(h.clone());
    }
    Ok(out)
}

/// Precomputed first-layer operand: `Â X` for attributed graphs; with identity features
/// `Â I W = Â W` so the sparse product is applied to the weight directly.
#[derive(Debug, Clone)]
pub enum EncoderInput {
    Identity,
    Propagated(Mat),
}

impl EncoderInput {
    pub fn new(g: &DirectedGraph, adj: &NormalizedAdjacency) -> Self {
        match g.attributes() {
            Some(x) => EncoderInput::Propagated(adj.matrix().matmul(x.view())),
            None => EncoderInput::Identity,
        }
    }
}

/// Records the encoder on `tape`; `weights` are the tape leaves of `W⁽⁰⁾ …`.
pub fn encode_on_tape(
    tape: &mut Tape,
    adj: &NormalizedAdjacency,
    input: &EncoderInput,
    weights: &[Var],
    f: Activation,
) -> Vec<Var> {
    let mut hidden = Vec::with_capacity(weights.len());
    for (l, &w) in weights.iter().enumerate() {
        let pre = if l == 0 {
            match input {
                EncoderInput::Identity => tape.spmm(adj.operator(), w),
                EncoderInput::Propagated(ax) => {
                    let x = tape.leaf(ax.clone());
                    tape.matmul(x, w)
                }
            }
        } else {
            let prev = hidden[l - 1];
            let ah = tape.spmm(adj.operator(), prev);
            tape.matmul(ah, w)
        };
        hidden.push(tape.act(pre, f));
    }
    hidden
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_node_is_identity() {
        let g = DirectedGraph::from_edges(1, []).unwrap();
        assert_eq!(normalize_adjacency(&g).matrix().to_dense(), array![[1.0]]);
    }

    #[test]
    fn two_node_hand_example() {
        let g = DirectedGraph::from_edges(2, [(0, 1)]).unwrap();
        let a = normalize_adjacency(&g).matrix().to_dense();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&a, &array![[r, 0.5], [0.0, r]], 1e-15));
    }

    #[test]
    fn symmetric_graph_gives_standard_gcn_normalisation() {
        let g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap().symmetrized();
        let a = normalize_adjacency(&g).matrix().to_dense();
        let mut at = Array2::eye(4);
        for &(i, j) in g.edges() {
            at[[i, j]] = 1.0;
        }
        let d: Vec<f64> = (0..4).map(|i| at.row(i).sum()).collect();
        let expect = Mat::from_shape_fn((4, 4), |(i, j)| at[[i, j]] / (d[i] * d[j]).sqrt());
        assert!(close(&a, &expect, 1e-15));
        assert!(close(&a, &a.t().to_owned(), 1e-15));
    }

    #[test]
    fn entries_nonnegative_and_pattern_preserved() {
        let g = DirectedGraph::from_edges(5, [(0, 1), (1, 2), (3, 1), (4, 0), (2, 4)]).unwrap();
        let a = normalize_adjacency(&g).matrix().to_dense();
        for i in 0..5 {
            for j in 0..5 {
                let structural = i == j || g.has_edge(i, j);
                assert_eq!(a[[i, j]] > 0.0, structural);
                assert!(a[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn identity_layer_passes_through() {
        let g = DirectedGraph::from_edges(3, []).unwrap();
        let adj = normalize_adjacency(&g);
        let h = array![[1.0, 2.0], [3.0, 4.0], [5.0, -6.0]];
        let out = gcn_layer(&adj, &h, &Array2::eye(2), Activation::Identity).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = DirectedGraph::from_edges(3, [(0, 1)]).unwrap();
        let adj = normalize_adjacency(&g);
        let out = gcn_layer(&adj, &Array2::eye(3), &Array2::zeros((3, 4)), Activation::LeakyRelu(0.2)).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_node_layer_reproduces_adjacency() {
        let g = DirectedGraph::from_edges(2, [(0, 1)]).unwrap();
        let adj = normalize_adjacency(&g);
        let out = gcn_layer(&adj, &Array2::eye(2), &Array2::eye(2), Activation::Identity).unwrap();
        assert_eq!(out, adj.matrix().to_dense());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = DirectedGraph::from_edges(2, [(0, 1)]).unwrap();
        let adj = normalize_adjacency(&g);
        let r = gcn_layer(&adj, &Array2::eye(2), &Array2::zeros((3, 1)), Activation::Identity);
        assert!(matches!(r, Err(DlsmError::Shape { .. })));
        assert!(EncoderStack::new(vec![Array2::zeros((2, 3)), Array2::zeros((4, 1))], Activation::Relu).is_err());
    }

    #[test]
    fn encode_defaults_to_identity_features() {
        let g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(input_features(&g), Array2::<f64>::eye(4));
        let stack = EncoderStack::new(vec![Array2::from_elem((4, 3), 0.1)], Activation::LeakyRelu(0.2)).unwrap();
        let hs = encode(&g, &stack).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].dim(), (4, 3));
    }

    #[test]
    fn tape_encoder_matches_plain_encoder() {
        let mut g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 1)]).unwrap();
        let w0 = Mat::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let w1 = Mat::from_shape_fn((3, 2), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.2);
        let stack = EncoderStack::new(vec![w0.clone(), w1.clone()], Activation::LeakyRelu(0.2)).unwrap();
        let check = |g: &DirectedGraph, w0: &Mat| {
            let plain = encode(g, &EncoderStack::new(vec![w0.clone(), w1.clone()], stack.activation).unwrap()).unwrap();
            let adj = normalize_adjacency(g);
            let mut t = Tape::new();
            let wv = vec![t.leaf(w0.clone()), t.leaf(w1.clone())];
            let hs = encode_on_tape(&mut t, &adj, &EncoderInput::new(g, &adj), &wv, stack.activation);
            for (p, v) in plain.iter().zip(hs) {
                assert!(close(p, t.value(v), 1e-12));
            }
        };
        check(&g, &w0);
        // attributed variant: 2 features
        g.set_attributes(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -0.5]]).unwrap();
        check(&g, &Mat::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.1));
    }
}
