//! Stochastic decoder building blocks: stick-breaking prior logits, the three reparameterized
//! samplers, the column-stochastic output transform and the two edge-probability heads.
//!
//! The layer-by-layer wiring of these pieces on a differentiation tape lives in
//! [`crate::model`].

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::autodiff::Mat;
use crate::config::Mode;
use crate::error::{DlsmError, Result};
use crate::objective::PROB_CLAMP;
use crate::rng::Rng;
use crate::special::{self, clamp_logit, sigmoid, LOGIT_CLAMP};

/// `π_g = logit(v^g)` for `g = 1..=G`, evaluated in log space so it stays exact (and strictly
/// decreasing) long after `v^g` underflows. Saturates at `+LOGIT_CLAMP` when `v^g` rounds to 1.
pub fn stick_breaking_logits(v: f64, g: usize) -> Result<Vec<f64>> {
    if !(v > 0.0 && v < 1.0) {
        return Err(DlsmError::Domain(format!("stick-breaking fraction v = {v} outside (0, 1)")));
    }
    let lv = v.ln();
    Ok((1..=g)
        .map(|k| {
            let log_p = k as f64 * lv;
            let log_q = (-log_p.exp_m1()).ln(); // ln(1 − v^k)
            if log_q.is_finite() {
                log_p - log_q
            } else {
                LOGIT_CLAMP
            }
        })
        .collect())
}

/// Relaxed Bernoulli draw `σ((π̂ + logit u) / λ)`. The noise is clamped so that
/// `|logit u| ≤ LOGIT_CLAMP`.
pub fn sample_binary_concrete(logit: f64, temperature: f64, u: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(DlsmError::Domain(format!("temperature {temperature} must be positive")));
    }
    Ok(sigmoid((logit + noise_logit(u)) / temperature))
}

/// `logit(u)` with the noise-degeneracy guard.
pub fn noise_logit(u: f64) -> f64 {
    if u <= 0.0 {
        -LOGIT_CLAMP
    } else if u >= 1.0 {
        LOGIT_CLAMP
    } else {
        clamp_logit(special::logit(u))
    }
}

/// `z = μ̂ + σ̂ ⊙ ε`.
pub fn sample_normal_positions(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(DlsmError::Shape { op: "sample_normal_positions", detail: "length mismatch".into() });
    }
    if sigma.iter().any(|&s| s < 0.0) {
        return Err(DlsmError::Domain("negative scale".into()));
    }
    Ok(mu.iter().zip(sigma).zip(eps).map(|((m, s), e)| m + s * e).collect())
}

/// One Gamma(shape, 1) variate and its implicit-reparameterization derivative `dx/dshape`.
pub fn draw_gamma(shape: f64, rng: &mut Rng) -> (f64, f64) {
    let x = Gamma::new(shape, 1.0).expect("positive shape").sample(rng).max(f64::MIN_POSITIVE);
    (x, special::gamma_sample_da(shape, x))
}

/// Gamma(shape, 1) variate by inversion of a fixed uniform, and `dx/dshape`.
pub fn gamma_from_uniform(shape: f64, u: f64) -> (f64, f64) {
    let x = special::gamma_quantile(shape, u).max(f64::MIN_POSITIVE);
    (x, special::gamma_sample_da(shape, x))
}

/// Average implicit shape derivative `∂x/∂a` over `draws` Gamma(a, 1) variates. Since
/// `E[x] = a`, this estimates 1.
pub fn mean_gamma_shape_gradient(a: f64, draws: usize, rng: &mut Rng) -> f64 {
    (0..draws).map(|_| draw_gamma(a, rng).1).sum::<f64>() / draws as f64
}

/// Normalises raw Gamma draws down the node axis and magnifies by `n`, so every column sums
/// to `n` (mean factor 1 per node).
pub fn normalize_factors(raw: &Mat) -> Mat {
    let n = raw.nrows() as f64;
    let col = raw.sum_axis(Axis(0));
    raw / &col.insert_axis(Axis(0)) * n
}

/// Draws Dirichlet node random factors for a layer: one Gamma(α_k, 1) per entry of the
/// `n × G` shape matrix, then [`normalize_factors`].
pub fn sample_dirichlet_factors(shapes: &Mat, rng: &mut Rng) -> Result<Mat> {
    if shapes.iter().any(|&a| !(a > 0.0)) {
        return Err(DlsmError::Domain("Dirichlet shapes must be positive".into()));
    }
    let raw = shapes.mapv(|a| draw_gamma(a, rng).0);
    Ok(normalize_factors(&raw))
}

/// Draws uniforms strictly inside (0, 1).
pub fn open_uniforms(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    })
}

pub fn standard_normals(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Checks that every column of `w` sums to one within `1e-6`.
pub fn check_column_stochastic(w: &Mat) -> Result<()> {
    for (c, s) in w.sum_axis(Axis(0)).iter().enumerate() {
        if (s - 1.0).abs() > 1e-6 {
            return Err(DlsmError::Invariant(format!("output-transform column {c} sums to {s}")));
        }
    }
    Ok(())
}

/// Final-layer quantities consumed by the reconstruction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLatents {
    pub z: Mat,
    pub gamma: Mat,
    pub delta: Mat,
}

/// Maps positions and factors from the last stochastic layer to the `D`-dimensional latent
/// space through a column-stochastic matrix.
pub fn output_transform(z: &Mat, gamma: &Mat, delta: &Mat, w_out: &Mat) -> Result<OutputLatents> {
    check_column_stochastic(w_out)?;
    for m in [z, gamma, delta] {
        if m.ncols() != w_out.nrows() {
            return Err(DlsmError::Shape {
                op: "output_transform",
                detail: format!("latents have {} columns, W_out has {} rows", m.ncols(), w_out.nrows()),
            });
        }
    }
    Ok(OutputLatents { z: z.dot(w_out), gamma: gamma.dot(w_out), delta: delta.dot(w_out) })
}

/// Global edge weights `(β₀, β_out, β_in)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Betas {
    pub bias: f64,
    pub out: f64,
    pub inn: f64,
}

impl Betas {
    pub fn from_row(row: &[f64]) -> Self {
        Betas { bias: row[0], out: row[1], inn: row[2] }
    }

    /// Undirected special case: `β_in` tied to `β_out`.
    pub fn tied(self) -> Self {
        Betas { inn: self.out, ..self }
    }
}

/// Edge logit for the distance head:
/// `β₀ − β_out ‖γ_i ⊙ (z_i − z_j)‖ − β_in ‖δ_j ⊙ (z_i − z_j)‖`.
pub fn distance_logit(zi: &[f64], zj: &[f64], gi: &[f64], dj: &[f64], b: Betas) -> f64 {
    let (mut a2, mut b2) = (0.0, 0.0);
    for k in 0..zi.len() {
        let d = zi[k] - zj[k];
        a2 += (gi[k] * d).powi(2);
        b2 += (dj[k] * d).powi(2);
    }
    b.bias - b.out * a2.sqrt() - b.inn * b2.sqrt()
}

/// Edge logit for the inner-product head: `(β_out γ_i ⊙ z_i)ᵀ (β_in δ_j ⊙ z_j)`.
pub fn inner_product_logit(zi: &[f64], zj: &[f64], gi: &[f64], dj: &[f64], b: Betas) -> f64 {
    let dot: f64 = (0..zi.len()).map(|k| gi[k] * zi[k] * dj[k] * zj[k]).sum();
    b.out * b.inn * dot
}

/// `σ(x)` kept inside `[PROB_CLAMP, 1 − PROB_CLAMP]`, the range the cross-entropy sees.
pub fn edge_probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn edge_probability_distance(zi: &[f64], zj: &[f64], gi: &[f64], dj: &[f64], b: Betas) -> f64 {
    edge_probability(distance_logit(zi, zj, gi, dj, b))
}

pub fn edge_probability_inner_product(zi: &[f64], zj: &[f64], gi: &[f64], dj: &[f64], b: Betas) -> f64 {
    edge_probability(inner_product_logit(zi, zj, gi, dj, b))
}

pub fn edge_logit(out: &OutputLatents, i: usize, j: usize, b: Betas, mode: Mode, undirected: bool) -> f64 {
    let (b, delta) = if undirected { (b.tied(), &out.gamma) } else { (b, &out.delta) };
    let zi = out.z.row(i);
    let zj = out.z.row(j);
    let gi = out.gamma.row(i);
    let dj = delta.row(j);
    let (zi, zj, gi, dj) = (zi.as_slice().unwrap(), zj.as_slice().unwrap(), gi.as_slice().unwrap(), dj.as_slice().unwrap());
    match mode {
        Mode::Distance => distance_logit(zi, zj, gi, dj, b),
        Mode::InnerProduct => inner_product_logit(zi, zj, gi, dj, b),
    }
}

/// Full `n × n` edge-probability matrix with a zero diagonal. With `undirected` set the
/// reconstruction uses `δ = γ` and `β_in = β_out`, so the result is symmetric.
pub fn reconstruct(out: &OutputLatents, b: Betas, mode: Mode, undirected: bool) -> Mat {
    let n = out.z.nrows();
    let out = standard_layout(out);
    Mat::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            edge_probability(edge_logit(&out, i, j, b, mode, undirected))
        }
    })
}

pub(crate) fn standard_layout(out: &OutputLatents) -> OutputLatents {
    OutputLatents {
        z: out.z.as_standard_layout().to_owned(),
        gamma: out.gamma.as_standard_layout().to_owned(),
        delta: out.delta.as_standard_layout().to_owned(),
    }
}
