//! Parameters and the full stochastic forward pass: encoder, stochastic decoder layers,
//! output transform and loss, recorded on one [`Tape`].
//!
//! Decoder layer `l` (1-based) reads encoder state `h⁽ᴸᵉⁿᶜ⁺¹⁻ˡ⁾`, so the coarsest decoder
//! layer meets the deepest encoder layer. Layer 1 instead reads the concatenation of the
//! first and last encoder states. Given head input `h`, each layer computes
//!
//! ```text
//! π̂ = π_prior + A_π h + b_π                      s  = σ((π̂ + logit u) / λ)
//! μ_p = s ⊙ f(z_prev W_z)                         μ̂ = μ_p + A_μ h + b_μ
//! σ̂ = softplus(A_σ h + b_σ)                       z  = μ̂ + σ̂ ⊙ ε
//! α_p = ξ + s ⊙ g(γ_prev W_γ)                     ξ̂ = α_p ⊙ softplus(A_ξ h + b_ξ)
//! γ̃ ~ Gamma(ξ̂, 1)                                 γ  = n γ̃ / Σ_nodes γ̃
//! ```
//!
//! with `δ` mirroring `γ` through `ψ`. On layer 1 there is no previous layer, so `μ_p = 0`
//! and `α_p = ξ`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::config::{GammaSampler, ModelConfig};
use crate::decoder::{self, stick_breaking_logits, OutputLatents};
use crate::encoder::{encode_on_tape, input_dim, normalize_adjacency, EncoderInput, NormalizedAdjacency};
use crate::error::{DlsmError, Result};
use crate::graph::DirectedGraph;
use crate::objective::{
    kl_concrete_on_tape, kl_dirichlet_on_tape, kl_normal_on_tape, reconstruction_on_tape, LossBreakdown, ReconTarget,
};
use crate::rng::{substream, Rng};

/// Posterior scales never fall below this.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Posterior Dirichlet shapes never fall below this.
pub const SHAPE_FLOOR: f64 = 1e-3;
/// Initial bias of the shape heads, `softplus⁻¹(10)`: posterior shapes start ten times the
/// prior's, so early Gamma draws are concentrated (coefficient of variation ≈ 0.3, not 1).
const SHAPE_BIAS_INIT: f64 = 9.999_954_599_039_63;
/// Initial bias of the scale heads, `softplus⁻¹(0.1)`.
const SCALE_BIAS_INIT: f64 = -2.252_168_461_044_090_6;

/// Named trainable matrices. Iteration order is the sorted name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params(pub BTreeMap<String, Mat>);

impl Params {
    pub fn get(&self, name: &str) -> &Mat {
        self.0.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn count(&self) -> usize {
        self.0.values().map(|m| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Head input width for decoder layer `l` (1-based).
fn head_input_dim(cfg: &ModelConfig, l: usize) -> usize {
    let k = &cfg.encoder_sizes;
    if l == 1 {
        k[0] + k[k.len() - 1]
    } else {
        k[encoder_pair(k.len(), l)]
    }
}

/// 0-based encoder layer read by decoder layer `l ≥ 2`.
fn encoder_pair(enc_layers: usize, l: usize) -> usize {
    enc_layers.saturating_sub(l).min(enc_layers - 1)
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-r..r))
}

const HEADS: [&str; 5] = ["mu", "sigma", "pi", "xi", "psi"];

/// Fresh parameters for `cfg` on inputs of width `in_dim`, drawn from the `init` substream.
pub fn init_params(cfg: &ModelConfig, in_dim: usize) -> Params {
    let mut rng = substream(cfg.seed, "init");
    let mut p = BTreeMap::new();
    let mut prev = in_dim;
    for (l, &k) in cfg.encoder_sizes.iter().enumerate() {
        p.insert(format!("enc.{l}.w"), glorot(prev, k, &mut rng));
        prev = k;
    }
    let g = &cfg.decoder_sizes;
    for l in 1..=g.len() {
        let h = head_input_dim(cfg, l);
        let gl = g[l - 1];
        for head in HEADS {
            p.insert(format!("dec.{l}.{head}.w"), glorot(h, gl, &mut rng));
            let b = match head {
                "xi" | "psi" => SHAPE_BIAS_INIT,
                "sigma" => SCALE_BIAS_INIT,
                _ => 0.0,
            };
            p.insert(format!("dec.{l}.{head}.b"), Mat::from_elem((1, gl), b));
        }
        if l > 1 {
            for w in ["wz", "wg", "wd"] {
                p.insert(format!("dec.{l}.{w}"), glorot(g[l - 2], gl, &mut rng));
            }
        }
    }
    p.insert("out.u".into(), glorot(g[g.len() - 1], cfg.latent_dim, &mut rng));
    p.insert("beta".into(), ndarray::array![[0.0, 1.0, 1.0]]);
    Params(p)
}

/// Graph-dependent constants shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n: usize,
    pub adj: NormalizedAdjacency,
    pub input: EncoderInput,
    pub in_dim: usize,
}

impl GraphContext {
    pub fn new(g: &DirectedGraph) -> Self {
        let adj = normalize_adjacency(g);
        GraphContext { n: g.n(), input: EncoderInput::new(g, &adj), adj, in_dim: input_dim(g) }
    }
}

/// Noise for one decoder layer; all matrices are `n × G_l`.
#[derive(Debug, Clone)]
pub struct LayerNoise {
    pub eps: Mat,
    pub u: Mat,
    pub u_gamma: Mat,
    pub u_delta: Mat,
}

/// Stored noise for every layer. Gamma variates are produced by CDF inversion of the stored
/// uniforms, so repeated passes see exactly the same randomness.
#[derive(Debug, Clone)]
pub struct FixedNoise(pub Vec<LayerNoise>);

impl FixedNoise {
    pub fn draw(n: usize, sizes: &[usize], rng: &mut Rng) -> Self {
        FixedNoise(
            sizes
                .iter()
                .map(|&g| LayerNoise {
                    eps: decoder::standard_normals(n, g, rng),
                    u: decoder::open_uniforms(n, g, rng),
                    u_gamma: decoder::open_uniforms(n, g, rng),
                    u_delta: decoder::open_uniforms(n, g, rng),
                })
                .collect(),
        )
    }
}

/// Where the randomness of a forward pass comes from.
pub enum Noise<'a> {
    /// Fresh draws from the stream.
    Sample(&'a mut Rng, GammaSampler),
    Fixed(&'a FixedNoise),
    /// Posterior means (`z = μ̂`, `s = σ(π̂)`, `γ ∝ ξ̂`); no loss is computed.
    Mean,
}

impl Noise<'_> {
    fn eps(&mut self, l: usize, n: usize, g: usize) -> Option<Mat> {
        match self {
            Noise::Sample(rng, _) => Some(decoder::standard_normals(n, g, rng)),
            Noise::Fixed(f) => Some(f.0[l].eps.clone()),
            Noise::Mean => None,
        }
    }

    /// Clamped `logit(u)` noise for the memberships.
    fn logistic(&mut self, l: usize, n: usize, g: usize) -> Option<Mat> {
        let u = match self {
            Noise::Sample(rng, _) => decoder::open_uniforms(n, g, rng),
            Noise::Fixed(f) => f.0[l].u.clone(),
            Noise::Mean => return None,
        };
        Some(u.mapv(decoder::noise_logit))
    }

    /// Gamma(shape, 1) draws and their shape derivatives.
    fn gamma(&mut self, l: usize, which: usize, shapes: &Mat) -> Option<(Mat, Mat)> {
        let mut x = Mat::zeros(shapes.raw_dim());
        let mut dx = Mat::zeros(shapes.raw_dim());
        match self {
            Noise::Sample(rng, GammaSampler::Rejection) => {
                for ((xv, dv), &a) in x.iter_mut().zip(dx.iter_mut()).zip(shapes) {
                    (*xv, *dv) = decoder::draw_gamma(a, rng);
                }
            }
            Noise::Sample(rng, GammaSampler::InverseCdf) => {
                let u = decoder::open_uniforms(shapes.nrows(), shapes.ncols(), rng);
                fill_inverse(&mut x, &mut dx, shapes, &u);
            }
            Noise::Fixed(f) => {
                let u = if which == 0 { &f.0[l].u_gamma } else { &f.0[l].u_delta };
                fill_inverse(&mut x, &mut dx, shapes, u);
            }
            Noise::Mean => return None,
        }
        Some((x, dx))
    }
}

fn fill_inverse(x: &mut Mat, dx: &mut Mat, shapes: &Mat, u: &Mat) {
    for (((xv, dv), &a), &uu) in x.iter_mut().zip(dx.iter_mut()).zip(shapes).zip(u) {
        (*xv, *dv) = decoder::gamma_from_uniform(a, uu);
    }
}

/// Per-epoch schedule values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub temperature: f64,
    pub kl_weight: f64,
}

/// Samples and variational parameters of one stochastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatents {
    pub z: Mat,
    pub s: Mat,
    pub gamma: Mat,
    /// Absent for undirected models, where `δ = γ`.
    pub delta: Option<Mat>,
    pub mu: Mat,
    pub sigma: Mat,
    pub pi: Mat,
    pub xi: Mat,
    pub psi: Option<Mat>,
    pub prior_mu: Mat,
    pub prior_pi: Vec<f64>,
    pub prior_xi: Mat,
    pub prior_psi: Option<Mat>,
}

impl LayerLatents {
    /// Hard community memberships `s ≥ 0.5`.
    pub fn hard_memberships(&self) -> Array2<bool> {
        self.s.mapv(|x| x >= 0.5)
    }
}

/// Result of one forward pass.
pub struct Forward {
    /// Objective actually optimised: reconstruction plus KL scaled by the warm-up weight.
    pub objective: Option<Var>,
    pub breakdown: Option<LossBreakdown>,
    pub layers: Vec<LayerLatents>,
    pub output: OutputLatents,
    pub w_out: Mat,
    /// Tape leaves of the parameters, in [`Params`] order.
    pub param_vars: Vec<(String, Var)>,
}

impl Forward {
    pub fn gradients(&self, tape: &Tape) -> Option<Gradients> {
        self.objective.map(|o| tape.backward(o))
    }
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn new(config: ModelConfig, in_dim: usize) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, in_dim);
        Ok(Model { config, params })
    }

    /// Records a forward pass. A loss is produced only when `target` is given and the noise
    /// is not [`Noise::Mean`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        mut noise: Noise<'_>,
        settings: StepSettings,
        target: Option<&ReconTarget>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let n = ctx.n;
        let mean_mode = matches!(noise, Noise::Mean);
        let param_vars: Vec<(String, Var)> =
            self.params.0.iter().map(|(k, m)| (k.clone(), tape.leaf(m.clone()))).collect();
        let pv: BTreeMap<&str, Var> = param_vars.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let p = |name: &str| -> Var { *pv.get(name).unwrap_or_else(|| panic!("missing parameter {name}")) };

        let enc_w: Vec<Var> = (0..cfg.encoder_sizes.len()).map(|l| p(&format!("enc.{l}.w"))).collect();
        if self.params.get("enc.0.w").nrows() != ctx.in_dim {
            return Err(DlsmError::Shape {
                op: "forward",
                detail: format!("model expects {} input features, graph has {}", self.params.get("enc.0.w").nrows(), ctx.in_dim),
            });
        }
        let hidden = encode_on_tape(tape, &ctx.adj, &ctx.input, &enc_w, cfg.encoder_activation);
        let first_input = tape.concat(hidden[0], hidden[hidden.len() - 1]);

        let lambda = settings.temperature;
        let stick = stick_breaking_logits(cfg.v, *cfg.decoder_sizes.iter().max().unwrap())?;
        let mut layers = Vec::new();
        let mut kl_vars: Vec<[Option<Var>; 4]> = Vec::new();
        let mut prev: Option<(Var, Var, Option<Var>)> = None;

        for (li, &g) in cfg.decoder_sizes.iter().enumerate() {
            let l = li + 1;
            let h = if l == 1 { first_input } else { hidden[encoder_pair(hidden.len(), l)] };
            let head = |tape: &mut Tape, name: &str| {
                let w = p(&format!("dec.{l}.{name}.w"));
                let b = p(&format!("dec.{l}.{name}.b"));
                let hw = tape.matmul(h, w);
                tape.add_row(hw, b)
            };

            // memberships
            let prior_pi_row = Mat::from_shape_vec((1, g), stick[..g].to_vec()).unwrap();
            let prior_pi_var = tape.leaf(prior_pi_row.clone());
            let pi_resid = head(tape, "pi");
            let pi_q = tape.add_row(pi_resid, prior_pi_var);
            let logistic = noise.logistic(li, n, g);
            let s = match &logistic {
                Some(lg) => {
                    let shifted = tape.add_const(pi_q, lg);
                    let scaled = tape.scale(shifted, 1.0 / lambda);
                    tape.sigmoid(scaled)
                }
                None => tape.sigmoid(pi_q),
            };

            // priors from the previous layer
            let (prior_mu, prior_xi, prior_psi) = match prev {
                None => {
                    let zero = tape.leaf(Mat::zeros((n, g)));
                    let xi = tape.leaf(Mat::from_elem((n, g), cfg.xi));
                    let psi = (!cfg.undirected).then(|| tape.leaf(Mat::from_elem((n, g), cfg.psi)));
                    (zero, xi, psi)
                }
                Some((z_prev, g_prev, d_prev)) => {
                    let zw = tape.matmul(z_prev, p(&format!("dec.{l}.wz")));
                    let fz = tape.act(zw, cfg.prior_activation);
                    let mu = tape.mul(s, fz);
                    let gate = |tape: &mut Tape, prev: Var, w: &str, base: f64| {
                        let pw = tape.matmul(prev, p(&format!("dec.{l}.{w}")));
                        let f = tape.act(pw, cfg.shape_activation);
                        let gated = tape.mul(s, f);
                        tape.shift(gated, base)
                    };
                    let xi = gate(tape, g_prev, "wg", cfg.xi);
                    let psi = d_prev.map(|d| gate(tape, d, "wd", cfg.psi));
                    (mu, xi, psi)
                }
            };

            // positions
            let mu_resid = head(tape, "mu");
            let mu_q = tape.add(prior_mu, mu_resid);
            let sigma_pre = head(tape, "sigma");
            let sigma_sp = tape.softplus(sigma_pre);
            let sigma_q = tape.shift(sigma_sp, SCALE_FLOOR);
            let z = match noise.eps(li, n, g) {
                Some(eps) => {
                    let spread = tape.mul_const(sigma_q, &eps);
                    tape.add(mu_q, spread)
                }
                None => mu_q,
            };

            // node random factors
            let factor = |tape: &mut Tape, noise: &mut Noise<'_>, prior: Var, name: &str, which: usize| -> Result<(Var, Var)> {
                let pre = head(tape, name);
                let mult = tape.softplus(pre);
                let scaled = tape.mul(prior, mult);
                let shape = tape.shift(scaled, SHAPE_FLOOR);
                let raw = match noise.gamma(li, which, tape.value(shape)) {
                    Some((x, dx)) => tape.elementwise(shape, x, dx),
                    None => shape,
                };
                let total = tape.col_sum(raw);
                let unit = tape.div_row(raw, total);
                Ok((shape, tape.scale(unit, n as f64)))
            };
            let (xi_q, gamma) = factor(tape, &mut noise, prior_xi, "xi", 0)?;
            let delta = match prior_psi {
                Some(pp) => Some(factor(tape, &mut noise, pp, "psi", 1)?),
                None => None,
            };
            let (psi_q, delta_var) = match delta {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };

            if !mean_mode {
                let kz = kl_normal_on_tape(tape, mu_q, sigma_q, prior_mu, cfg.prior_variance);
                let ks = kl_concrete_on_tape(tape, pi_q, &prior_pi_row, logistic.as_ref().unwrap());
                let kg = kl_dirichlet_on_tape(tape, xi_q, prior_xi);
                let kd = psi_q.map(|q| kl_dirichlet_on_tape(tape, q, prior_psi.unwrap()));
                kl_vars.push([Some(kz), Some(ks), Some(kg), kd]);
            }

            let val = |v: Var| tape.value(v).clone();
            let latents = LayerLatents {
                z: val(z),
                s: val(s),
                gamma: val(gamma),
                delta: delta_var.map(val),
                mu: val(mu_q),
                sigma: val(sigma_q),
                pi: val(pi_q),
                xi: val(xi_q),
                psi: psi_q.map(val),
                prior_mu: val(prior_mu),
                prior_pi: stick[..g].to_vec(),
                prior_xi: val(prior_xi),
                prior_psi: prior_psi.map(val),
            };
            check_layer_finite(&latents, l)?;
            layers.push(latents);
            prev = Some((z, gamma, delta_var));
        }

        let (z_last, g_last, d_last) = prev.expect("at least one decoder layer");
        let w_out = tape.col_softmax(p("out.u"));
        let z_out = tape.matmul(z_last, w_out);
        let g_out = tape.matmul(g_last, w_out);
        let d_out = match d_last {
            Some(d) => tape.matmul(d, w_out),
            None => g_out,
        };
        let output = OutputLatents { z: tape.value(z_out).clone(), gamma: tape.value(g_out).clone(), delta: tape.value(d_out).clone() };
        let w_out_val = tape.value(w_out).clone();

        let (objective, breakdown) = match target {
            Some(target) if !mean_mode => {
                let recon = reconstruction_on_tape(tape, z_out, g_out, d_out, p("beta"), target, cfg.mode, cfg.undirected);
                let mut terms = vec![(recon, 1.0)];
                let mut per = [vec![], vec![], vec![], vec![]];
                for layer in &kl_vars {
                    for (t, v) in layer.iter().enumerate() {
                        per[t].push(v.map_or(0.0, |v| tape.scalar(v)));
                        if let Some(v) = v {
                            terms.push((*v, settings.kl_weight));
                        }
                    }
                }
                let [kz, ks, kg, kd] = per;
                let breakdown = LossBreakdown::new(kz, ks, kg, kd, tape.scalar(recon))?;
                (Some(tape.weighted_sum(&terms)), Some(breakdown))
            }
            _ => (None, None),
        };

        Ok(Forward { objective, breakdown, layers, output, w_out: w_out_val, param_vars })
    }

    /// Deterministic posterior-mean pass on `ctx`.
    pub fn posterior_means(&self, ctx: &GraphContext) -> Result<Forward> {
        let settings = StepSettings { temperature: self.config.temperature, kl_weight: 1.0 };
        self.forward(&mut Tape::new(), ctx, Noise::Mean, settings, None)
    }

    /// Objective value and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        ctx: &GraphContext,
        noise: Noise<'_>,
        settings: StepSettings,
        target: &ReconTarget,
    ) -> Result<(f64, LossBreakdown, BTreeMap<String, Mat>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ctx, noise, settings, Some(target))?;
        let objective = fwd.objective.expect("loss requested");
        let grads = tape.backward(objective);
        let out = fwd
            .param_vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt(*v, self.params.get(k))))
            .collect();
        Ok((tape.scalar(objective), fwd.breakdown.unwrap(), out))
    }

    /// Global edge weights `(β₀, β_out, β_in)`, with `β_in` tied for undirected models.
    pub fn betas(&self) -> decoder::Betas {
        let b = decoder::Betas::from_row(self.params.get("beta").as_slice().unwrap());
        if self.config.undirected {
            b.tied()
        } else {
            b
        }
    }

    pub fn w_out(&self) -> Mat {
        crate::autodiff::col_softmax(self.params.get("out.u"))
    }
}

fn check_layer_finite(l: &LayerLatents, layer: usize) -> Result<()> {
    let named: [(&str, Option<&Mat>); 6] = [
        ("z", Some(&l.z)),
        ("s", Some(&l.s)),
        ("gamma", Some(&l.gamma)),
        ("delta", l.delta.as_ref()),
        ("sigma", Some(&l.sigma)),
        ("xi", Some(&l.xi)),
    ];
    for (name, m) in named {
        if let Some(m) = m {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(DlsmError::NonFinite { term: name.into(), layer });
            }
        }
    }
    Ok(())
}
