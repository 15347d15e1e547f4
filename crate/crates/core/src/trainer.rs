//! Full-batch SGVB training with Adam, KL warm-up and early stopping on validation AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::config::ModelConfig;
use crate::decoder::check_column_stochastic;
use crate::error::{DlsmError, Result};
use crate::evaluation::score_pairs;
use crate::graph::DirectedGraph;
use crate::metrics::auc;
use crate::model::{GraphContext, Model, Noise, StepSettings};
use crate::objective::{default_pos_weight, ReconTarget};
use crate::rng::{indexed_substream, Rng};
use crate::split::{sample_non_edges, EdgeSplit};

/// Consecutive non-finite epochs tolerated before giving up.
pub const DIVERGENCE_PATIENCE: usize = 3;

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kl_z: f64,
    pub kl_s: f64,
    pub kl_gamma: f64,
    pub kl_delta: f64,
    pub recon: f64,
    pub total: f64,
    #[serde(with = "lenient_float")]
    pub val_auc: f64,
}

/// JSON has no NaN or infinities; those are written as strings so checkpoints stay exact.
mod lenient_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Trained parameters plus everything needed to evaluate them: the training graph (the
/// encoder input), the split identity and the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub train_graph: DirectedGraph,
    pub split_id: String,
    pub split_seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    #[serde(with = "lenient_float")]
    pub best_val_auc: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn context(&self) -> GraphContext {
        GraphContext::new(&self.train_graph)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }
}

/// Adam with the usual defaults; state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut BTreeMap<String, Mat>, grads: &BTreeMap<String, Mat>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("gradient for a known parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(g.raw_dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Reconstruction pairs for one epoch: every ordered pair for graphs up to the dense
/// threshold, otherwise positives plus freshly sampled negatives.
fn epoch_target(train: &DirectedGraph, cfg: &ModelConfig, pos_weight: f64, rng: &mut Rng) -> Result<ReconTarget> {
    let n = train.n();
    if n <= cfg.dense_threshold {
        return Ok(ReconTarget::dense(n, train.edges(), pos_weight));
    }
    let count = ((cfg.neg_sample_factor * train.m() as f64).round() as usize).max(1);
    let negatives = sample_non_edges(train, count, rng)?;
    Ok(ReconTarget::sampled(n, train.edges(), &negatives, pos_weight))
}

/// Trains on `split.train_pos` only and returns the parameters with the best validation AUC.
pub fn train(g: &DirectedGraph, split: &EdgeSplit, config: &ModelConfig) -> Result<TrainedModel> {
    train_with_hook(g, split, config, |_, _| Ok(()))
}

/// [`train`] with a callback after every optimiser step, receiving the epoch and the
/// updated model.
pub fn train_with_hook(
    g: &DirectedGraph,
    split: &EdgeSplit,
    config: &ModelConfig,
    mut hook: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<TrainedModel> {
    config.validate()?;
    if split.train_pos.is_empty() {
        return Err(DlsmError::EmptyGraph("no training edges".into()));
    }
    let train_graph = split.train_graph(g)?;
    let ctx = GraphContext::new(&train_graph);
    let mut model = Model::new(config.clone(), ctx.in_dim)?;
    let pos_weight = config.pos_weight.unwrap_or_else(|| default_pos_weight(train_graph.n(), train_graph.m()));
    let (val_pairs, val_labels) = split.val_pairs();
    let mut adam = Adam::new(config.learning_rate);

    let mut history = Vec::new();
    let mut best = (model.params.clone(), 0usize, f64::NEG_INFINITY);
    let mut bad_epochs = 0;
    let mut since_best = 0;
    let dense_target =
        (train_graph.n() <= config.dense_threshold).then(|| ReconTarget::dense(train_graph.n(), train_graph.edges(), pos_weight));

    for epoch in 0..config.epochs {
        let settings = StepSettings { temperature: config.temperature_at(epoch), kl_weight: config.kl_weight_at(epoch) };
        let mut rng = indexed_substream(config.seed, "sampling", epoch as u64);
        let sampled;
        let target = match &dense_target {
            Some(t) => t,
            None => {
                let mut neg_rng = indexed_substream(config.seed, "negatives", epoch as u64);
                sampled = epoch_target(&train_graph, config, pos_weight, &mut neg_rng)?;
                &sampled
            }
        };
        let step = model.loss_and_gradients(&ctx, Noise::Sample(&mut rng, config.gamma_sampler), settings, target);
        let step = match step {
            Ok((obj, breakdown, grads)) if obj.is_finite() && grads.values().all(|m| m.iter().all(|x| x.is_finite())) => {
                Some((breakdown, grads))
            }
            Ok(_) | Err(DlsmError::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        };
        let Some((breakdown, grads)) = step else {
            bad_epochs += 1;
            log::warn!("epoch {epoch}: non-finite loss or gradient, update skipped");
            if bad_epochs >= DIVERGENCE_PATIENCE {
                return Err(DlsmError::Diverged { epoch });
            }
            continue;
        };
        bad_epochs = 0;
        adam.step(&mut model.params.0, &grads);
        check_column_stochastic(&model.w_out())?;
        hook(epoch, &model)?;

        let val_auc = match model.posterior_means(&ctx) {
            Ok(f) => {
                let scores = score_pairs(&f.output, model.betas(), config.mode, config.undirected, &val_pairs)?;
                auc(&scores, &val_labels).unwrap_or(f64::NAN)
            }
            Err(DlsmError::NonFinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        let [kl_z, kl_s, kl_gamma, kl_delta] = breakdown.kl_totals();
        history.push(EpochRecord { epoch, kl_z, kl_s, kl_gamma, kl_delta, recon: breakdown.recon, total: breakdown.total, val_auc });
        log::debug!("epoch {epoch}: loss {:.4} val_auc {val_auc:.4}", breakdown.total);

        if val_auc > best.2 {
            best = (model.params.clone(), epoch, val_auc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (params, best_epoch, best_val_auc) = best;
    model.params = params;
    Ok(TrainedModel {
        config_hash: config.hash(),
        model,
        train_graph,
        split_id: split.id(),
        split_seed: split.seed,
        best_epoch,
        best_val_auc,
        history,
    })
}

/// Writes the history as CSV with the columns of [`EpochRecord`].
pub fn write_history(history: &[EpochRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| DlsmError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DlsmError::io(path, e))?;
    Ok(())
}
