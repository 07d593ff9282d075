use std::time::Instant;

use cloudless::model::{load_params, save_params, Ablations, Model, ModelConfig, SarInput};
use cloudless::nn::Session;
use cloudless::ops::Mode;
use cloudless::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inputs(cfg: &ModelConfig, seed: u64) -> (Tensor, Option<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.patch;
    let cloudy = Tensor::rand_uniform([1, cfg.opt_channels, p, p], 0.0, 1.0, &mut rng);
    let sar = cfg
        .dual()
        .then(|| Tensor::rand_uniform([1, cfg.sar_channels(), p, p], 0.0, 1.0, &mut rng));
    (cloudy, sar)
}

#[test]
fn output_shape_matches_input() {
    let cfg = ModelConfig::desk();
    let (model, mut store) = Model::build(cfg, 0).unwrap();
    let (c, s) = inputs(&cfg, 1);
    let t = Instant::now();
    let y = model.predict(&mut store, &c, s.as_ref()).unwrap();
    eprintln!("desk forward {:?}, {} params", t.elapsed(), store.trainable_count());
    assert_eq!(y.shape(), c.shape());
}

#[test]
fn zero_output_conv_is_long_skip_identity() {
    let cfg = ModelConfig::desk();
    let (model, mut store) = Model::build(cfg, 3).unwrap();
    let out = model.output_conv();
    store.set(out.weight, Tensor::zeros(store.get(out.weight).shape())).unwrap();
    let (c, s) = inputs(&cfg, 2);
    let y = model.predict(&mut store, &c, s.as_ref()).unwrap();
    assert_eq!(y, c);
}

#[test]
fn build_is_deterministic() {
    let (_, a) = Model::build(ModelConfig::desk(), 42).unwrap();
    let (_, b) = Model::build(ModelConfig::desk(), 42).unwrap();
    let (_, c) = Model::build(ModelConfig::desk(), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.trainable_count() > 0);
}

#[test]
fn full_scale_parameter_count_is_reported() {
    let (_, store) = Model::build(ModelConfig::full_scale(), 0).unwrap();
    let n = store.trainable_count();
    eprintln!("full-scale parameters: {n} ({:.2} M)", n as f64 / 1e6);
    assert!(n > 1_000_000);
}

#[test]
fn ablated_variants_keep_shape() {
    for (name, ab) in Ablations::variants() {
        let cfg = ModelConfig {
            ablations: ab,
            ..ModelConfig::desk()
        };
        let (model, mut store) = Model::build(cfg, 5).unwrap();
        let (c, s) = inputs(&cfg, 6);
        let y = model.predict(&mut store, &c, s.as_ref()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 32, 32), "{name}");
    }
    let cfg = ModelConfig {
        ablations: Ablations {
            no_mmcf: true,
            no_mmrf: true,
            ..Ablations::default()
        },
        ..ModelConfig::desk()
    };
    let (model, mut store) = Model::build(cfg, 5).unwrap();
    let (c, s) = inputs(&cfg, 6);
    assert_eq!(model.predict(&mut store, &c, s.as_ref()).unwrap().shape(), c.shape());
    for sel in SarInput::ALL {
        let cfg = ModelConfig {
            sar_input: sel,
            ..ModelConfig::desk()
        };
        let (model, mut store) = Model::build(cfg, 5).unwrap();
        let (c, s) = inputs(&cfg, 6);
        assert_eq!(model.predict(&mut store, &c, s.as_ref()).unwrap().shape(), c.shape());
    }
}

#[test]
fn optical_only_ignores_radar() {
    let cfg = ModelConfig {
        ablations: Ablations {
            no_polsar: true,
            ..Ablations::default()
        },
        ..ModelConfig::desk()
    };
    let (model, mut store) = Model::build(cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = Tensor::rand_uniform([1, 4, 32, 32], 0.0, 1.0, &mut rng);
    let r = Tensor::rand_uniform([1, 9, 32, 32], 0.0, 1.0, &mut rng);
    let mut s = Session::new(&mut store, Mode::Train, true);
    let cv = s.input(c, false);
    let rv = s.input(r, true);
    let y = model.forward(&mut s, cv, Some(rv)).unwrap();
    let l = s.graph.sum(y).unwrap();
    s.backward(l).unwrap();
    let g = s.graph.grad(rv).map(|g| g.max_abs()).unwrap_or(0.0);
    assert_eq!(g, 0.0);
}

#[test]
fn rejects_bad_inputs() {
    let cfg = ModelConfig::desk();
    let (model, mut store) = Model::build(cfg, 0).unwrap();
    let (c, s) = inputs(&cfg, 1);
    assert!(model.predict(&mut store, &c, None).is_err());
    let big = c.map(|v| v + 2.0);
    assert!(model.predict(&mut store, &big, s.as_ref()).is_err());
    let small = Tensor::zeros([1, 4, 16, 16]);
    assert!(model.predict(&mut store, &small, s.as_ref()).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = Model::build(ModelConfig::desk(), 9).unwrap();
    save_params(dir.path(), &store).unwrap();
    let (_, mut other) = Model::build(ModelConfig::desk(), 10).unwrap();
    load_params(dir.path(), &mut other).unwrap();
    assert_eq!(store, other);
    let _ = model;
    let (_, mut wrong) = Model::build(
        ModelConfig {
            base_channels: 4,
            ..ModelConfig::desk()
        },
        0,
    )
    .unwrap();
    assert!(load_params(dir.path(), &mut wrong).is_err());
}

#[test]
fn training_step_timing() {
    let cfg = ModelConfig::desk();
    let (model, mut store) = Model::build(cfg, 0).unwrap();
    let (c, s) = inputs(&cfg, 1);
    let t = Instant::now();
    for _ in 0..3 {
        let mut sess = Session::new(&mut store, Mode::Train, true);
        let cv = sess.input(c.clone(), false);
        let rv = sess.input(s.clone().unwrap(), false);
        let y = model.forward(&mut sess, cv, Some(rv)).unwrap();
        let l = sess.graph.mean(y).unwrap();
        sess.backward(l).unwrap();
    }
    eprintln!("train step {:?}", t.elapsed() / 3);
}
