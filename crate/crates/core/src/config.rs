//! Model and training configuration with a flat `key = value` file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Activation;
use crate::error::{DlsmError, Result};

/// Edge-probability head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Degree-heterogeneous distance model.
    Distance,
    /// Inner-product ablation.
    InnerProduct,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Distance => "distance",
            Mode::InnerProduct => "inner_product",
        }
    }

    pub fn method_name(self) -> &'static str {
        match self {
            Mode::Distance => "DLSM",
            Mode::InnerProduct => "DLSM-IP",
        }
    }
}

/// How Gamma variates are drawn. Both use the implicit (quantile-map) gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaSampler {
    /// Marsaglia–Tsang rejection draws; fast.
    Rejection,
    /// Numerical inversion of the CDF from a stored uniform; exact common random numbers.
    InverseCdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_sizes: Vec<usize>,
    pub encoder_activation: Activation,
    pub decoder_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub mode: Mode,
    pub undirected: bool,
    /// Global stick-breaking fraction.
    pub v: f64,
    pub temperature: f64,
    /// Temperature reached at the last epoch (linear schedule); equal to `temperature` for a
    /// constant temperature.
    pub temperature_final: f64,
    pub prior_variance: f64,
    pub xi: f64,
    pub psi: f64,
    /// Nonlinearity on the latent-position prior path.
    pub prior_activation: Activation,
    /// Nonlinearity on the Dirichlet prior-shape path; must be non-negative.
    pub shape_activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub kl_warmup: usize,
    pub seed: u64,
    pub pos_weight: Option<f64>,
    pub neg_sample_factor: f64,
    /// Above this node count the reconstruction term subsamples non-edges.
    pub dense_threshold: usize,
    pub gamma_sampler: GammaSampler,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_sizes: vec![64, 32],
            encoder_activation: Activation::LeakyRelu(0.2),
            decoder_sizes: vec![32, 50],
            latent_dim: 16,
            mode: Mode::Distance,
            undirected: false,
            v: 0.9,
            temperature: 0.5,
            temperature_final: 0.5,
            prior_variance: 1.0,
            xi: 1.0,
            psi: 1.0,
            prior_activation: Activation::LeakyRelu(0.2),
            shape_activation: Activation::Softplus,
            learning_rate: 0.01,
            epochs: 500,
            patience: 50,
            kl_warmup: 50,
            seed: 0,
            pos_weight: None,
            neg_sample_factor: 5.0,
            dense_threshold: 5000,
            gamma_sampler: GammaSampler::Rejection,
        }
    }
}

pub const KEYS: &[&str] = &[
    "encoder_sizes",
    "encoder_activation",
    "decoder_sizes",
    "latent_dim",
    "mode",
    "undirected",
    "v",
    "temperature",
    "temperature_final",
    "prior_variance",
    "xi",
    "psi",
    "prior_activation",
    "shape_activation",
    "learning_rate",
    "epochs",
    "patience",
    "kl_warmup",
    "seed",
    "pos_weight",
    "neg_sample_factor",
    "dense_threshold",
    "gamma_sampler",
];

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value)))
        .collect()
}

fn bad(key: &str, value: &str) -> DlsmError {
    DlsmError::Config(format!("`{key}`: cannot parse `{value}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

impl ModelConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "encoder_sizes" => self.encoder_sizes = parse_list(key, v)?,
            "encoder_activation" => self.encoder_activation = Activation::parse(v).ok_or_else(|| bad(key, v))?,
            "decoder_sizes" => self.decoder_sizes = parse_list(key, v)?,
            "latent_dim" => self.latent_dim = num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "distance" | "dlsm" => Mode::Distance,
                    "inner_product" | "ip" | "dlsm-ip" => Mode::InnerProduct,
                    _ => return Err(bad(key, v)),
                }
            }
            "undirected" => self.undirected = num(key, v)?,
            "v" => self.v = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "temperature_final" => self.temperature_final = num(key, v)?,
            "prior_variance" => self.prior_variance = num(key, v)?,
            "xi" => self.xi = num(key, v)?,
            "psi" => self.psi = num(key, v)?,
            "prior_activation" => self.prior_activation = Activation::parse(v).ok_or_else(|| bad(key, v))?,
            "shape_activation" => self.shape_activation = Activation::parse(v).ok_or_else(|| bad(key, v))?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "kl_warmup" => self.kl_warmup = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "pos_weight" => {
                self.pos_weight = if v == "auto" || v.is_empty() { None } else { Some(num(key, v)?) }
            }
            "neg_sample_factor" => self.neg_sample_factor = num(key, v)?,
            "dense_threshold" => self.dense_threshold = num(key, v)?,
            "gamma_sampler" => {
                self.gamma_sampler = match v {
                    "rejection" => GammaSampler::Rejection,
                    "inverse_cdf" => GammaSampler::InverseCdf,
                    _ => return Err(bad(key, v)),
                }
            }
            other => return Err(DlsmError::UnknownConfigKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        Some(match key {
            "encoder_sizes" => join(&self.encoder_sizes),
            "encoder_activation" => self.encoder_activation.name(),
            "decoder_sizes" => join(&self.decoder_sizes),
            "latent_dim" => self.latent_dim.to_string(),
            "mode" => self.mode.name().to_string(),
            "undirected" => self.undirected.to_string(),
            "v" => self.v.to_string(),
            "temperature" => self.temperature.to_string(),
            "temperature_final" => self.temperature_final.to_string(),
            "prior_variance" => self.prior_variance.to_string(),
            "xi" => self.xi.to_string(),
            "psi" => self.psi.to_string(),
            "prior_activation" => self.prior_activation.name(),
            "shape_activation" => self.shape_activation.name(),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "patience" => self.patience.to_string(),
            "kl_warmup" => self.kl_warmup.to_string(),
            "seed" => self.seed.to_string(),
            "pos_weight" => self.pos_weight.map_or("auto".to_string(), |w| w.to_string()),
            "neg_sample_factor" => self.neg_sample_factor.to_string(),
            "dense_threshold" => self.dense_threshold.to_string(),
            "gamma_sampler" => match self.gamma_sampler {
                GammaSampler::Rejection => "rejection".into(),
                GammaSampler::InverseCdf => "inverse_cdf".into(),
            },
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DlsmError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DlsmError::io(path, e))?;
        let mut cfg = ModelConfig::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` text covering every field.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(DlsmError::Config(m.to_string()));
        if self.encoder_sizes.is_empty() || self.encoder_sizes.contains(&0) {
            return err("encoder_sizes must be a non-empty list of positive sizes");
        }
        if self.decoder_sizes.is_empty() || self.decoder_sizes.contains(&0) {
            return err("decoder_sizes must be a non-empty list of positive sizes");
        }
        if self.decoder_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return err("decoder_sizes must be strictly increasing from the top layer down");
        }
        if self.latent_dim == 0 {
            return err("latent_dim must be positive");
        }
        if !(self.v > 0.0 && self.v < 1.0) {
            return err("v must lie in (0, 1)");
        }
        if !(self.temperature > 0.0 && self.temperature_final > 0.0) {
            return err("temperature must be positive");
        }
        if !(self.prior_variance > 0.0) {
            return err("prior_variance must be positive");
        }
        if !(self.xi > 0.0 && self.psi > 0.0) {
            return err("xi and psi must be positive");
        }
        if matches!(self.shape_activation, Activation::Identity | Activation::LeakyRelu(_)) {
            return err("shape_activation must be non-negative (relu or softplus)");
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return err("learning_rate and epochs must be positive");
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0) {
                return err("pos_weight must be positive");
            }
        }
        if !(self.neg_sample_factor > 0.0) {
            return err("neg_sample_factor must be positive");
        }
        Ok(())
    }

    /// Temperature in effect at `epoch` (0-based).
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.temperature + t * (self.temperature_final - self.temperature)
    }

    /// KL weight at `epoch` under the linear warm-up.
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if self.kl_warmup == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / self.kl_warmup as f64).min(1.0)
        }
    }
}
