//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tape`] records every intermediate value of one forward pass. Calling
//! [`Tape::backward`] on a 1×1 output walks the tape in reverse and returns the gradient of
//! that output with respect to every recorded node. Heavy fused kernels (pairwise
//! reconstruction, closed-form KL terms) compute their local gradients during the forward pass
//! and register them through [`Tape::scalar_op`].

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::sparse::Csr;
use crate::special::{sigmoid, softplus};

pub type Mat = Array2<f64>;

/// Constant sparse matrix together with its transpose for the backward product.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub forward: Csr,
    pub transposed: Csr,
}

impl SparseOperator {
    pub fn new(forward: Csr) -> Self {
        let transposed = forward.transpose();
        SparseOperator { forward, transposed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn name(self) -> String {
        match self {
            Activation::Identity => "identity".into(),
            Activation::LeakyRelu(a) => format!("leaky_relu:{a}"),
            Activation::Relu => "relu".into(),
            Activation::Softplus => "softplus".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "identity" | "linear" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "softplus" => Some(Activation::Softplus),
            "leaky_relu" => Some(Activation::LeakyRelu(0.2)),
            _ => s.strip_prefix("leaky_relu:").and_then(|a| a.parse().ok()).map(Activation::LeakyRelu),
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseOperator>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Sigmoid(Var),
    Concat(Var, Var),
    ColSum(Var),
    SumAll(Var),
    ColSoftmax(Var),
    /// Elementwise map with a precomputed local derivative.
    Elementwise(Var, Mat),
    /// 1×1 output with precomputed gradients for each parent.
    Scalar(Vec<(Var, Mat)>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if the output does not depend on it.
    pub fn wrt(&self, v: Var, like: &Mat) -> Mat {
        self.0[v.0].clone().unwrap_or_else(|| Mat::zeros(like.raw_dim()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Trainable input or constant; gradients are reported for both.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn spmm(&mut self, s: &Arc<SparseOperator>, b: Var) -> Var {
        let v = s.forward.matmul(self.value(b).view());
        self.push(v, Op::SpMM(Arc::clone(s), b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + 1·row` with `row` of shape 1×k.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn div_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) / self.value(row);
        self.push(v, Op::DivRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// `a + c` for a constant matrix (or broadcastable row) `c`.
    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::Elementwise(a, Mat::ones(self.value(a).raw_dim())))
    }

    /// `a ⊙ c` for a constant matrix `c` of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Elementwise(a, c.clone()))
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::Elementwise(a, Mat::ones(self.value(a).raw_dim())))
    }

    pub fn act(&mut self, a: Var, f: Activation) -> Var {
        if f == Activation::Identity {
            return a;
        }
        let v = self.value(a).mapv(|x| f.apply(x));
        self.push(v, Op::Act(a, f))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Act(a, Activation::Softplus))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Elementwise map whose derivative is supplied by the caller.
    pub fn elementwise(&mut self, a: Var, value: Mat, derivative: Mat) -> Var {
        debug_assert_eq!(value.dim(), self.value(a).dim());
        debug_assert_eq!(derivative.dim(), value.dim());
        self.push(value, Op::Elementwise(a, derivative))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat row counts");
        self.push(v, Op::Concat(a, b))
    }

    /// Column sums as a 1×k row.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::ColSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Softmax down each column, so every column sums to one.
    pub fn col_softmax(&mut self, a: Var) -> Var {
        let v = col_softmax(self.value(a));
        self.push(v, Op::ColSoftmax(a))
    }

    /// 1×1 node with gradients precomputed by a fused kernel.
    pub fn scalar_op(&mut self, value: f64, grads: Vec<(Var, Mat)>) -> Var {
        for (v, g) in &grads {
            debug_assert_eq!(g.dim(), self.value(*v).dim());
        }
        self.push(Mat::from_elem((1, 1), value), Op::Scalar(grads))
    }

    /// Sum of several 1×1 nodes with weights.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let grads = terms.iter().map(|&(v, w)| (v, Mat::from_elem((1, 1), w))).collect();
        self.scalar_op(total, grads)
    }

    /// Reverse sweep from the 1×1 node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::SpMM(s, b) => acc(*b, s.transposed.matmul(g.view())),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g.clone());
                }
                Op::MulRow(a, r) => {
                    acc(*r, (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, &g * self.value(*r));
                }
                Op::DivRow(a, r) => {
                    let rv = self.value(*r);
                    let ga = &g / rv;
                    // d(a/r)/dr = −a/r² = −out/r
                    let gr = -(&ga * &node.value).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*r, gr);
                    acc(*a, ga);
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::Act(a, f) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= f.derivative(x));
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(&node.value).for_each(|d, &s| *d *= s * (1.0 - s));
                    acc(*a, d);
                }
                Op::Concat(a, b) => {
                    let ka = self.value(*a).ncols();
                    acc(*a, g.slice(ndarray::s![.., ..ka]).to_owned());
                    acc(*b, g.slice(ndarray::s![.., ka..]).to_owned());
                }
                Op::ColSum(a) => {
                    let d = Mat::from_shape_fn(self.value(*a).raw_dim(), |(_, c)| g[[0, c]]);
                    acc(*a, d);
                }
                Op::SumAll(a) => acc(*a, Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]])),
                Op::ColSoftmax(a) => {
                    // per column: dx = s ⊙ (g − Σ g ⊙ s)
                    let s = &node.value;
                    let dots = (&g * s).sum_axis(Axis(0));
                    let mut d = g.clone();
                    for (c, mut col) in d.axis_iter_mut(Axis(1)).enumerate() {
                        col.zip_mut_with(&s.column(c), |x, &sv| *x = sv * (*x - dots[c]));
                    }
                    acc(*a, d);
                }
                Op::Elementwise(a, deriv) => acc(*a, &g * deriv),
                Op::Scalar(parents) => {
                    let gs = g[[0, 0]];
                    for (v, d) in parents {
                        acc(*v, d * gs);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }
}

pub fn col_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite differences of `f` around every entry of `x0`.
    fn numeric_grad(x0: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        Mat::from_shape_fn(x0.raw_dim(), |idx| {
            let mut p = x0.clone();
            p[idx] += h;
            let mut m = x0.clone();
            m[idx] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn check(x0: Mat, build: impl Fn(&mut Tape, Var) -> Var) {
        let eval = |x: &Mat| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let out = build(&mut t, v);
            t.scalar(out)
        };
        let mut t = Tape::new();
        let v = t.leaf(x0.clone());
        let out = build(&mut t, v);
        let g = t.backward(out).wrt(v, &x0);
        let fd = numeric_grad(&x0, eval);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()), "analytic {a} vs numeric {b}");
        }
    }

    fn sample() -> Mat {
        array![[0.3, -1.2, 0.7], [1.5, 0.4, -0.6]]
    }

    #[test]
    fn matmul_and_sums() {
        let w = array![[0.5, -0.3], [0.2, 0.9], [-1.1, 0.4]];
        check(sample(), move |t, x| {
            let wv = t.leaf(w.clone());
            let y = t.matmul(x, wv);
            let y = t.act(y, Activation::LeakyRelu(0.2));
            let y2 = t.mul(y, y);
            t.sum(y2)
        });
    }

    #[test]
    fn spmm_backward() {
        let s = Arc::new(SparseOperator::new(Csr::from_triplets(2, 2, vec![(0, 0, 0.7), (0, 1, 0.5), (1, 1, 0.7)])));
        check(sample(), move |t, x| {
            let y = t.spmm(&s, x);
            let y = t.softplus(y);
            t.sum(y)
        });
    }

    #[test]
    fn row_broadcasts() {
        check(sample(), |t, x| {
            let e = t.softplus(x);
            let cs = t.col_sum(e);
            let normed = t.div_row(e, cs);
            let scaled = t.mul_row(normed, cs);
            let shifted = t.add_row(scaled, cs);
            let sq = t.mul(shifted, normed);
            t.sum(sq)
        });
    }

    #[test]
    fn softmax_sigmoid_concat() {
        check(sample(), |t, x| {
            let sm = t.col_softmax(x);
            let sg = t.sigmoid(x);
            let c = t.concat(sm, sg);
            let w = t.leaf(Mat::from_shape_fn((6, 1), |(i, _)| i as f64 - 2.5));
            let y = t.matmul(c, w);
            let y = t.mul(y, y);
            t.sum(y)
        });
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let s = col_softmax(&sample());
        for c in s.sum_axis(Axis(0)) {
            assert!((c - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_and_scalars() {
        let c = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        check(sample(), move |t, x| {
            let a = t.mul_const(x, &c);
            let b = t.add_const(a, &c);
            let b = t.shift(b, 0.5);
            let b = t.scale(b, -0.3);
            let d = t.sub(b, x);
            let s1 = t.sum(d);
            let sq = t.mul(x, x);
            let s2 = t.sum(sq);
            t.weighted_sum(&[(s1, 2.0), (s2, 0.5)])
        });
    }

    #[test]
    fn activation_names_round_trip() {
        for a in [Activation::Identity, Activation::Relu, Activation::Softplus, Activation::LeakyRelu(0.2)] {
            assert_eq!(Activation::parse(&a.name()), Some(a));
        }
    }
}
