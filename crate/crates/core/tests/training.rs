mod common;

use std::collections::HashSet;

use dlsm::config::{ModelConfig, Mode};
use dlsm::decoder::{check_column_stochastic, reconstruct};
use dlsm::model::{GraphContext, Model, Noise, StepSettings};
use dlsm::objective::ReconTarget;
use dlsm::rng::indexed_substream;
use dlsm::trainer::{train, train_with_hook, Adam};
use dlsm::{split_edges, DirectedGraph, SplitRatios};

#[test]
fn toy_loss_falls_over_two_hundred_steps() {
    let g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 1)]).unwrap();
    let cfg = ModelConfig {
        encoder_sizes: vec![4, 3],
        decoder_sizes: vec![2, 3],
        latent_dim: 2,
        seed: 11,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg.clone(), g.n()).unwrap();
    let ctx = GraphContext::new(&g);
    let target = ReconTarget::dense(4, g.edges(), 2.5);
    let settings = StepSettings { temperature: cfg.temperature, kl_weight: 1.0 };
    let mut adam = Adam::new(cfg.learning_rate);
    let mut losses = Vec::new();
    for step in 0..200 {
        let mut rng = indexed_substream(cfg.seed, "sampling", step);
        let (loss, _, grads) =
            model.loss_and_gradients(&ctx, Noise::Sample(&mut rng, cfg.gamma_sampler), settings, &target).unwrap();
        losses.push(loss);
        adam.step(&mut model.params.0, &grads);
    }
    let windows: Vec<f64> = losses.chunks(20).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    eprintln!("20-step means: {windows:.3?}");
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "moving average not monotone: {windows:?}");
    assert!(windows[9] < losses[0]);
}

#[test]
fn training_never_sees_held_out_edges() {
    let (g, split, tm) = common::small_run(1);
    let held: HashSet<_> = split.val_pos.iter().chain(&split.test_pos).collect();
    assert_eq!(tm.train_graph.n(), g.n());
    assert_eq!(tm.train_graph.m(), split.train_pos.len());
    assert!(tm.train_graph.edges().iter().all(|e| !held.contains(e)));
    // the encoder adjacency is built from the same graph
    let adj = dlsm::encoder::normalize_adjacency(&tm.train_graph).matrix().to_dense();
    for &(i, j) in &held {
        assert_eq!(adj[[*i, *j]], 0.0);
    }
}

#[test]
fn output_transform_stays_column_stochastic_every_step() {
    let g = common::small_graph();
    let split = split_edges(&g, SplitRatios::default(), 2).unwrap();
    let mut steps = 0;
    train_with_hook(&g, &split, &common::small_config(), |_, m| {
        steps += 1;
        let w = m.w_out();
        assert!(w.columns().into_iter().all(|c| (c.sum() - 1.0).abs() <= 1e-6));
        check_column_stochastic(&w)
    })
    .unwrap();
    assert_eq!(steps, 20);
}

#[test]
fn changing_the_seed_keeps_every_invariant() {
    let (_, _, a) = common::small_run(1);
    let (_, _, b) = common::small_run(2);
    assert_ne!(a.model.params, b.model.params);
    for tm in [&a, &b] {
        for name in a.model.params.names() {
            assert_eq!(tm.model.params.get(name).dim(), a.model.params.get(name).dim());
        }
        check_column_stochastic(&tm.model.w_out()).unwrap();
        let f = tm.model.posterior_means(&tm.context()).unwrap();
        assert!(f.output.gamma.iter().chain(&f.output.delta).all(|&x| x > 0.0));
        let p = reconstruct(&f.output, tm.model.betas(), Mode::Distance, false);
        for ((i, j), &x) in p.indexed_iter() {
            assert!(if i == j { x == 0.0 } else { x > 0.0 && x < 1.0 });
        }
    }
}

#[test]
fn same_inputs_same_model() {
    let (_, _, a) = common::small_run(9);
    let (_, _, b) = common::small_run(9);
    assert_eq!(a, b);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let g = common::small_graph();
    let split = split_edges(&g, SplitRatios::default(), 3).unwrap();
    let cfg = ModelConfig { epochs: 60, patience: 5, ..common::small_config() };
    let tm = train(&g, &split, &cfg).unwrap();
    let best = tm.history.iter().map(|r| r.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(tm.best_val_auc, best);
    assert_eq!(tm.history[tm.best_epoch].val_auc, best);
    assert!(tm.history.len() < 60 || tm.history.len() - 1 - tm.best_epoch < 5);
}

#[test]
fn large_graph_path_samples_negatives() {
    let g = dlsm::synth::directed_power_law(300, 6.0, 2.5, 4).unwrap();
    let g = dlsm::preprocess(&g).unwrap();
    let split = split_edges(&g, SplitRatios::default(), 4).unwrap();
    let cfg = ModelConfig { dense_threshold: 100, epochs: 5, ..common::small_config() };
    let a = train(&g, &split, &cfg).unwrap();
    let b = train(&g, &split, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.history.iter().all(|r| r.recon.is_finite() && r.recon > 0.0));
}

#[test]
fn undirected_training_runs() {
    let g = common::small_graph().symmetrized();
    let split = split_edges(&g, SplitRatios::default(), 5).unwrap();
    let cfg = ModelConfig { undirected: true, ..common::small_config() };
    let tm = train(&g, &split, &cfg).unwrap();
    assert!(tm.history.iter().all(|r| r.kl_delta == 0.0));
    let f = tm.model.posterior_means(&tm.context()).unwrap();
    let p = reconstruct(&f.output, tm.model.betas(), Mode::Distance, true);
    assert!((&p - &p.t()).iter().all(|x| x.abs() <= 1e-12));
}
