//! Central differences of the full objective on a 4-node toy, with the noise held fixed.

use dlsm::config::{Mode, ModelConfig};
use dlsm::model::{FixedNoise, GraphContext, Model, Noise, StepSettings};
use dlsm::objective::ReconTarget;
use dlsm::rng::substream;
use dlsm::DirectedGraph;

pub struct GradientCheck {
    pub entries: usize,
    pub worst: f64,
    pub worst_entry: String,
}

fn toy(mode: Mode, undirected: bool) -> (DirectedGraph, Model) {
    let g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 1)]).unwrap();
    let cfg = ModelConfig {
        encoder_sizes: vec![4, 3],
        decoder_sizes: vec![2, 3],
        latent_dim: 2,
        mode,
        undirected,
        seed: 11,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, g.n()).unwrap();
    // move β away from its symmetric start so every path is exercised
    model.params.0.insert("beta".into(), ndarray::array![[0.2, 0.9, 1.3]]);
    (g, model)
}

/// Worst relative error between analytic and numeric gradients over every parameter entry.
pub fn check_gradients(mode: Mode, undirected: bool) -> GradientCheck {
    let (g, model) = toy(mode, undirected);
    let ctx = GraphContext::new(&g);
    let target = ReconTarget::dense(4, g.edges(), 2.5);
    let noise = FixedNoise::draw(4, &model.config.decoder_sizes, &mut substream(5, "noise"));
    let settings = StepSettings { temperature: 0.5, kl_weight: 0.7 };
    let loss = |m: &Model| m.loss_and_gradients(&ctx, Noise::Fixed(&noise), settings, &target).unwrap().0;
    let (_, _, grads) = model.loss_and_gradients(&ctx, Noise::Fixed(&noise), settings, &target).unwrap();

    let mut out = GradientCheck { entries: 0, worst: 0.0, worst_entry: String::new() };
    for name in model.params.names().cloned().collect::<Vec<_>>() {
        let shape = model.params.get(&name).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let x = model.params.get(&name)[[r, c]];
                let h = 1e-5 * x.abs().max(1.0);
                let mut up = model.clone();
                up.params.0.get_mut(&name).unwrap()[[r, c]] = x + h;
                let mut dn = model.clone();
                dn.params.0.get_mut(&name).unwrap()[[r, c]] = x - h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                let an = grads[&name][[r, c]];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-2);
                if rel > out.worst {
                    out.worst = rel;
                    out.worst_entry = format!("{name}[{r},{c}]: analytic {an}, numeric {fd}");
                }
                out.entries += 1;
            }
        }
    }
    out
}
