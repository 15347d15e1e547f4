//! Negative ELBO: analytic Normal and Dirichlet KL divergences, a single-sample relaxed
//! Bernoulli KL, and the weighted adjacency cross-entropy.
//!
//! Each term exists twice: as a plain function for inspection and testing, and as a fused
//! node on the [`Tape`] whose local gradients are computed in closed form.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::config::Mode;
use crate::error::{DlsmError, Result};
use crate::special::{digamma, ln_gamma, sigmoid, softplus, trigamma};

/// Probabilities are kept inside `[PROB_CLAMP, 1 − PROB_CLAMP]` in the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Edge logits matching the probability clamp.
fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

/// Per-layer KL values and the reconstruction term of one sample pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl_z: Vec<f64>,
    pub kl_s: Vec<f64>,
    pub kl_gamma: Vec<f64>,
    pub kl_delta: Vec<f64>,
    pub recon: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Assembles the breakdown, checking every term is finite.
    pub fn new(kl_z: Vec<f64>, kl_s: Vec<f64>, kl_gamma: Vec<f64>, kl_delta: Vec<f64>, recon: f64) -> Result<Self> {
        for (name, terms) in [("kl_z", &kl_z), ("kl_s", &kl_s), ("kl_gamma", &kl_gamma), ("kl_delta", &kl_delta)] {
            if let Some(l) = terms.iter().position(|x| !x.is_finite()) {
                return Err(DlsmError::NonFinite { term: name.into(), layer: l + 1 });
            }
        }
        if !recon.is_finite() {
            return Err(DlsmError::NonFinite { term: "recon".into(), layer: 0 });
        }
        let mut b = LossBreakdown { kl_z, kl_s, kl_gamma, kl_delta, recon, total: 0.0 };
        b.total = b.kl_sum() + recon;
        Ok(b)
    }

    pub fn kl_sum(&self) -> f64 {
        [&self.kl_z, &self.kl_s, &self.kl_gamma, &self.kl_delta].iter().flat_map(|v| v.iter()).sum()
    }

    /// Per-term totals over layers, in the order `z, s, γ, δ`.
    pub fn kl_totals(&self) -> [f64; 4] {
        [
            self.kl_z.iter().sum(),
            self.kl_s.iter().sum(),
            self.kl_gamma.iter().sum(),
            self.kl_delta.iter().sum(),
        ]
    }
}

/// `KL(N(μ_q, σ_q²) ‖ N(μ_p, σ_p²))` summed over dimensions.
pub fn kl_normal(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    if sigma_q.len() != n || mu_p.len() != n || sigma_p.len() != n {
        return Err(DlsmError::Shape { op: "kl_normal", detail: "length mismatch".into() });
    }
    if sigma_q.iter().chain(sigma_p).any(|&s| !(s > 0.0)) {
        return Err(DlsmError::Domain("Normal scale must be positive".into()));
    }
    Ok((0..n).map(|k| normal_kl_term(mu_q[k], sigma_q[k], mu_p[k], sigma_p[k] * sigma_p[k])).sum())
}

fn normal_kl_term(mq: f64, sq: f64, mp: f64, var_p: f64) -> f64 {
    let d = mq - mp;
    0.5 * (var_p.ln() - 2.0 * sq.ln()) + (sq * sq + d * d) / (2.0 * var_p) - 0.5
}

/// Single-sample estimate of `KL(BinConcrete(π̂_q, λ) ‖ BinConcrete(π_p, λ))` at the
/// sample `s`, evaluated on the logit scale where the density is logistic.
pub fn kl_concrete(pi_q: f64, lambda_q: f64, pi_p: f64, lambda_p: f64, s: f64) -> Result<f64> {
    if lambda_q != lambda_p {
        return Err(DlsmError::Domain(format!("temperature mismatch: {lambda_q} vs {lambda_p}")));
    }
    if !(lambda_q > 0.0) {
        return Err(DlsmError::Domain("temperature must be positive".into()));
    }
    let s = s.clamp(1e-15, 1.0 - 1e-15);
    let y = (s / (1.0 - s)).ln();
    Ok(concrete_kl_term(pi_q, pi_p, lambda_q * y))
}

/// `log q − log p` of the logistic densities at `λy`; the `ln λ` Jacobians cancel.
fn concrete_kl_term(pi_q: f64, pi_p: f64, ly: f64) -> f64 {
    (pi_q - pi_p) - 2.0 * softplus(pi_q - ly) + 2.0 * softplus(pi_p - ly)
}

/// Log density of a Binary Concrete variable on (0, 1).
pub fn concrete_log_density(pi: f64, lambda: f64, s: f64) -> f64 {
    let ls = s.ln();
    let l1s = (1.0 - s).ln();
    // q(s) = λ e^π s^(−λ−1) (1−s)^(−λ−1) / (e^π s^(−λ) + (1−s)^(−λ))²
    let a = pi - lambda * ls;
    let b = -lambda * l1s;
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    lambda.ln() + pi + (-lambda - 1.0) * (ls + l1s) - 2.0 * lse
}

/// `KL(Dir(α_q) ‖ Dir(α_p))`.
pub fn kl_dirichlet(alpha_q: &[f64], alpha_p: &[f64]) -> Result<f64> {
    if alpha_q.len() != alpha_p.len() || alpha_q.is_empty() {
        return Err(DlsmError::Shape { op: "kl_dirichlet", detail: "length mismatch".into() });
    }
    if alpha_q.iter().chain(alpha_p).any(|&a| !(a > 0.0)) {
        return Err(DlsmError::Domain("Dirichlet shapes must be positive".into()));
    }
    Ok(dirichlet_kl_with_grads(alpha_q, alpha_p, None, None))
}

/// Value of the Dirichlet KL, optionally writing `∂/∂α_q` and `∂/∂α_p`.
fn dirichlet_kl_with_grads(aq: &[f64], ap: &[f64], gq: Option<&mut [f64]>, gp: Option<&mut [f64]>) -> f64 {
    let sq: f64 = aq.iter().sum();
    let sp: f64 = ap.iter().sum();
    let psi_sq = digamma(sq);
    let mut kl = ln_gamma(sq) - ln_gamma(sp);
    for k in 0..aq.len() {
        kl += ln_gamma(ap[k]) - ln_gamma(aq[k]) + (aq[k] - ap[k]) * (digamma(aq[k]) - psi_sq);
    }
    if let Some(gq) = gq {
        let tri_sq = trigamma(sq);
        for k in 0..aq.len() {
            gq[k] = (aq[k] - ap[k]) * trigamma(aq[k]) - (sq - sp) * tri_sq;
        }
    }
    if let Some(gp) = gp {
        let psi_sp = digamma(sp);
        for k in 0..aq.len() {
            gp[k] = digamma(ap[k]) - psi_sp - digamma(aq[k]) + psi_sq;
        }
    }
    kl
}

/// `−Σ_{i≠j} [w a_ij ln P_ij + (1 − a_ij) ln(1 − P_ij)]` with `P` clamped into
/// `[1e−7, 1 − 1e−7]`. The diagonal is ignored.
pub fn reconstruction_loss(p: &Mat, a: &Mat, pos_weight: f64) -> Result<f64> {
    if p.dim() != a.dim() || p.nrows() != p.ncols() {
        return Err(DlsmError::Shape { op: "reconstruction_loss", detail: format!("P {:?}, A {:?}", p.dim(), a.dim()) });
    }
    let mut loss = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i == j {
            continue;
        }
        if !(0.0..=1.0).contains(&pij) {
            return Err(DlsmError::Domain(format!("probability {pij} at ({i}, {j})")));
        }
        let q = pij.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let aij = a[[i, j]];
        loss -= pos_weight * aij * q.ln() + (1.0 - aij) * (1.0 - q).ln();
    }
    Ok(loss)
}

/// Default positive-class weight `(n(n−1) − m) / m`.
pub fn default_pos_weight(n: usize, m: usize) -> f64 {
    let pairs = (n * n.saturating_sub(1)) as f64;
    if m == 0 {
        1.0
    } else {
        ((pairs - m as f64) / m as f64).max(f64::MIN_POSITIVE)
    }
}

// ---------------------------------------------------------------------------------------
// Fused tape terms

/// Normal KL summed over all entries; the prior scale is a global constant.
pub fn kl_normal_on_tape(tape: &mut Tape, mu_q: Var, sigma_q: Var, mu_p: Var, prior_variance: f64) -> Var {
    let (mq, sq, mp) = (tape.value(mu_q), tape.value(sigma_q), tape.value(mu_p));
    let mut value = 0.0;
    let mut g_mu = Mat::zeros(mq.raw_dim());
    let mut g_sigma = Mat::zeros(mq.raw_dim());
    for ((idx, &m), (&s, &p)) in mq.indexed_iter().zip(sq.iter().zip(mp.iter())) {
        value += normal_kl_term(m, s, p, prior_variance);
        g_mu[idx] = (m - p) / prior_variance;
        g_sigma[idx] = s / prior_variance - 1.0 / s;
    }
    let g_prior = -&g_mu;
    tape.scalar_op(value, vec![(mu_q, g_mu), (sigma_q, g_sigma), (mu_p, g_prior)])
}

/// Relaxed Bernoulli KL at the reparameterized sample `λỹ = π̂ + noise`. Since `π̂ − λỹ`
/// equals `−noise`, the estimate depends on `π̂` only through the explicit terms.
pub fn kl_concrete_on_tape(tape: &mut Tape, pi_q: Var, pi_p: &Mat, noise: &Mat) -> Var {
    let pq = tape.value(pi_q);
    let mut value = 0.0;
    let mut g = Mat::zeros(pq.raw_dim());
    for (idx, &q) in pq.indexed_iter() {
        let p = pi_p[(0, idx.1)];
        let ly = q + noise[idx];
        value += concrete_kl_term(q, p, ly);
        g[idx] = 1.0 - 2.0 * sigmoid(p - ly);
    }
    tape.scalar_op(value, vec![(pi_q, g)])
}

/// Dirichlet KL per column (the node axis is the simplex), summed over columns.
pub fn kl_dirichlet_on_tape(tape: &mut Tape, alpha_q: Var, alpha_p: Var) -> Var {
    let aq = tape.value(alpha_q).t().as_standard_layout().to_owned();
    let ap = tape.value(alpha_p).t().as_standard_layout().to_owned();
    let (cols, n) = aq.dim();
    let mut gq = Mat::zeros((cols, n));
    let mut gp = Mat::zeros((cols, n));
    let mut value = 0.0;
    for c in 0..cols {
        value += dirichlet_kl_with_grads(
            aq.row(c).as_slice().unwrap(),
            ap.row(c).as_slice().unwrap(),
            gq.row_mut(c).into_slice(),
            gp.row_mut(c).into_slice(),
        );
    }
    let gq = gq.t().to_owned();
    let gp = gp.t().to_owned();
    tape.scalar_op(value, vec![(alpha_q, gq), (alpha_p, gp)])
}

/// Which ordered pairs enter the reconstruction term.
#[derive(Debug, Clone)]
pub enum ReconTarget {
    /// Every ordered pair `i ≠ j`; `adjacency` is row-major `n × n`.
    Dense { n: usize, adjacency: Vec<bool>, pos_weight: f64 },
    /// An explicit list of pairs with per-pair targets and weights.
    Pairs { pairs: Vec<(usize, usize)>, targets: Vec<bool>, weights: Vec<f64> },
}

impl ReconTarget {
    pub fn dense(n: usize, edges: &[(usize, usize)], pos_weight: f64) -> Self {
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            adjacency[i * n + j] = true;
        }
        ReconTarget::Dense { n, adjacency, pos_weight }
    }

    /// All positives plus `negatives`, the latter reweighted so the sum over non-edges is
    /// unbiased for the full cross-entropy.
    pub fn sampled(n: usize, edges: &[(usize, usize)], negatives: &[(usize, usize)], pos_weight: f64) -> Self {
        let total_neg = (n * (n - 1) - edges.len()) as f64;
        let w_neg = if negatives.is_empty() { 0.0 } else { total_neg / negatives.len() as f64 };
        let mut pairs = edges.to_vec();
        pairs.extend_from_slice(negatives);
        let mut targets = vec![true; edges.len()];
        targets.resize(pairs.len(), false);
        let mut weights = vec![pos_weight; edges.len()];
        weights.resize(pairs.len(), w_neg);
        ReconTarget::Pairs { pairs, targets, weights }
    }
}

/// Loss contribution and `∂/∂logit` of one pair.
#[inline]
fn bce_logit(l: f64, target: bool, weight: f64) -> (f64, f64) {
    let bound = logit_bound();
    let lc = l.clamp(-bound, bound);
    let inside = l.abs() < bound;
    if target {
        let d = if inside { -weight * sigmoid(-lc) } else { 0.0 };
        (weight * softplus(-lc), d)
    } else {
        let d = if inside { weight * sigmoid(lc) } else { 0.0 };
        (weight * softplus(lc), d)
    }
}

struct ReconGrads {
    z: Mat,
    gamma: Mat,
    delta: Mat,
    beta: [f64; 3],
}

/// Reconstruction cross-entropy as one fused tape node over `z`, `γ`, `δ` (all `n × D`)
/// and `β` (1×3: bias, out, in). With `undirected` set, `δ` is ignored in favour of `γ`
/// and `β_in` is tied to `β_out`.
pub fn reconstruction_on_tape(
    tape: &mut Tape,
    z: Var,
    gamma: Var,
    delta: Var,
    beta: Var,
    target: &ReconTarget,
    mode: Mode,
    undirected: bool,
) -> Var {
    let zv = tape.value(z).as_standard_layout().to_owned();
    let gv = tape.value(gamma).as_standard_layout().to_owned();
    let dv = if undirected { gv.clone() } else { tape.value(delta).as_standard_layout().to_owned() };
    let b = tape.value(beta);
    let (b0, bo) = (b[[0, 0]], b[[0, 1]]);
    let bi = if undirected { bo } else { b[[0, 2]] };
    let (value, mut g) = match mode {
        Mode::Distance => distance_recon(&zv, &gv, &dv, [b0, bo, bi], target),
        Mode::InnerProduct => inner_product_recon(&zv, &gv, &dv, [bo, bi], target),
    };
    let mut g_beta = Mat::zeros((1, 3));
    g_beta[[0, 0]] = g.beta[0];
    if undirected {
        g_beta[[0, 1]] = g.beta[1] + g.beta[2];
        g.gamma += &g.delta;
        g.delta.fill(0.0);
    } else {
        g_beta[[0, 1]] = g.beta[1];
        g_beta[[0, 2]] = g.beta[2];
    }
    tape.scalar_op(value, vec![(z, g.z), (gamma, g.gamma), (delta, g.delta), (beta, g_beta)])
}

fn distance_recon(z: &Mat, gamma: &Mat, delta: &Mat, b: [f64; 3], target: &ReconTarget) -> (f64, ReconGrads) {
    let (n, d) = z.dim();
    let zs = z.as_slice().unwrap();
    let gs = gamma.as_slice().unwrap();
    let ds = delta.as_slice().unwrap();
    let mut gz = vec![0.0; n * d];
    let mut gg = vec![0.0; n * d];
    let mut gd = vec![0.0; n * d];
    let mut gb = [0.0; 3];
    let mut loss = 0.0;
    let mut diff = vec![0.0; d];
    let mut pair = |i: usize, j: usize, t: bool, w: f64| {
        let (zi, zj) = (&zs[i * d..(i + 1) * d], &zs[j * d..(j + 1) * d]);
        let (gi, dj) = (&gs[i * d..(i + 1) * d], &ds[j * d..(j + 1) * d]);
        let (mut r1, mut r2) = (0.0, 0.0);
        for k in 0..d {
            diff[k] = zi[k] - zj[k];
            r1 += (gi[k] * diff[k]).powi(2);
            r2 += (dj[k] * diff[k]).powi(2);
        }
        let (r1, r2) = (r1.sqrt(), r2.sqrt());
        let l = b[0] - b[1] * r1 - b[2] * r2;
        let (v, dl) = bce_logit(l, t, w);
        loss += v;
        if dl == 0.0 {
            return;
        }
        gb[0] += dl;
        gb[1] -= dl * r1;
        gb[2] -= dl * r2;
        let c1 = if r1 > 0.0 { -dl * b[1] / r1 } else { 0.0 };
        let c2 = if r2 > 0.0 { -dl * b[2] / r2 } else { 0.0 };
        for k in 0..d {
            let dk = diff[k];
            let g_diff = c1 * gi[k] * gi[k] * dk + c2 * dj[k] * dj[k] * dk;
            gz[i * d + k] += g_diff;
            gz[j * d + k] -= g_diff;
            gg[i * d + k] += c1 * gi[k] * dk * dk;
            gd[j * d + k] += c2 * dj[k] * dk * dk;
        }
    };
    match target {
        ReconTarget::Dense { adjacency, pos_weight, .. } => {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let t = adjacency[i * n + j];
                        pair(i, j, t, if t { *pos_weight } else { 1.0 });
                    }
                }
            }
        }
        ReconTarget::Pairs { pairs, targets, weights } => {
            for ((&(i, j), &t), &w) in pairs.iter().zip(targets).zip(weights) {
                pair(i, j, t, w);
            }
        }
    }
    let shape = (n, d);
    let m = |v: Vec<f64>| Mat::from_shape_vec(shape, v).unwrap();
    (loss, ReconGrads { z: m(gz), gamma: m(gg), delta: m(gd), beta: [gb[0], gb[1], gb[2]] })
}

fn inner_product_recon(z: &Mat, gamma: &Mat, delta: &Mat, b: [f64; 2], target: &ReconTarget) -> (f64, ReconGrads) {
    let (n, _) = z.dim();
    let a = gamma * z; // rows γ_i ⊙ z_i
    let c = delta * z; // rows δ_j ⊙ z_j
    let scale = b[0] * b[1];
    let mut loss = 0.0;
    let mut g_beta = 0.0; // Σ dℓ · (a_i · c_j)
    let (ga, gc) = match target {
        ReconTarget::Dense { adjacency, pos_weight, .. } => {
            let s = a.dot(&c.t());
            let mut gl = Mat::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let t = adjacency[i * n + j];
                    let (v, dl) = bce_logit(scale * s[[i, j]], t, if t { *pos_weight } else { 1.0 });
                    loss += v;
                    gl[[i, j]] = dl;
                    g_beta += dl * s[[i, j]];
                }
            }
            (gl.dot(&c) * scale, gl.t().dot(&a) * scale)
        }
        ReconTarget::Pairs { pairs, targets, weights } => {
            let mut ga = Mat::zeros(a.raw_dim());
            let mut gc = Mat::zeros(c.raw_dim());
            for ((&(i, j), &t), &w) in pairs.iter().zip(targets).zip(weights) {
                let dot = a.row(i).dot(&c.row(j));
                let (v, dl) = bce_logit(scale * dot, t, w);
                loss += v;
                if dl != 0.0 {
                    g_beta += dl * dot;
                    ga.row_mut(i).scaled_add(dl * scale, &c.row(j));
                    gc.row_mut(j).scaled_add(dl * scale, &a.row(i));
                }
            }
            (ga, gc)
        }
    };
    let gz = &ga * gamma + &gc * delta;
    let gg = &ga * z;
    let gd = &gc * z;
    (loss, ReconGrads { z: gz, gamma: gg, delta: gd, beta: [0.0, g_beta * b[1], g_beta * b[0]] })
}
