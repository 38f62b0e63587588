use hdgcn::data::synthetic::SyntheticSpec;
use hdgcn::data::{Dataset, Split, Stream};
use hdgcn::error::HdError;
use hdgcn::network::{Model, ModelConfig};
use hdgcn::topology::SkeletonTopology;
use hdgcn::training::{lr_at, read_metrics, sgd_step, train, zero_buffers, TrainConfig, Trainer};
use hdgcn_tensor::{ParamStore, Parameter, Session, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_set(per_class: usize, split: Split) -> Dataset {
    let spec = SyntheticSpec { train_per_class: per_class, test_per_class: per_class, ..SyntheticSpec::default() };
    let seqs = spec.split(split).unwrap().into_iter().map(|(s, _)| s).collect();
    Dataset::prepare(seqs, spec.class_names(), &SkeletonTopology::ntu25(), Stream::Joint, 2, 16).unwrap()
}

fn scalar_store(v: f64, g: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("w", Tensor::scalar(v), true).unwrap();
    s.iter_mut().next().unwrap().grad = Tensor::scalar(g);
    s
}

fn value(s: &ParamStore<f64>) -> f64 {
    s.iter().next().unwrap().value.item()
}

#[test]
fn schedule_endpoints() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(5, &cfg).unwrap(), 0.1);
    assert!((lr_at(89, &cfg).unwrap() - 0.0001).abs() <= 1e-6);
    assert!((lr_at(0, &cfg).unwrap() - 0.02).abs() < 1e-15);
    assert!((lr_at(2, &cfg).unwrap() - 0.06).abs() < 1e-15);
    assert!(lr_at(90, &cfg).is_err());
}

proptest! {
    #[test]
    fn schedule_ramps_then_decays(epochs in 2usize..200, warm_frac in 0.0f64..1.0, lo in 1e-6f64..0.01, hi in 0.02f64..1.0) {
        let warmup = ((epochs - 1) as f64 * warm_frac) as usize;
        let cfg = TrainConfig { epochs, warmup_epochs: warmup, lr_min: lo, lr_max: hi, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..epochs).map(|e| lr_at(e, &cfg).unwrap()).collect();
        for (e, w) in lrs.windows(2).enumerate() {
            if e + 1 < warmup {
                prop_assert!(w[1] > w[0]);
            } else if e >= warmup {
                prop_assert!(w[1] <= w[0]);
            }
        }
        prop_assert!(lrs.iter().all(|&l| l > 0.0 && l <= hi * (1.0 + 1e-12)));
        prop_assert!((lrs[warmup] - hi).abs() < 1e-12);
        if epochs - 1 > warmup {
            prop_assert!((lrs[epochs - 1] - lo).abs() < 1e-12);
        }
    }
}

#[test]
fn config_invariants_are_enforced() {
    let d = TrainConfig::default();
    assert!(d.validate().is_ok());
    for bad in [
        TrainConfig { lr_min: 0.2, ..d.clone() },
        TrainConfig { warmup_epochs: 90, ..d.clone() },
        TrainConfig { batch_size: 0, ..d.clone() },
        TrainConfig { momentum: 1.0, ..d.clone() },
        TrainConfig { weight_decay: -1.0, ..d.clone() },
        TrainConfig { crop_ratio: Some(0.0), ..d.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(HdError::Config(_))), "{bad:?}");
    }
    assert_eq!(TrainConfig::from_json(&d.to_json()).unwrap(), d);
    assert_eq!(TrainConfig::from_json("{\"epochs\": 30}").unwrap().weight_decay, 0.0004);
}

#[test]
fn zero_gradient_without_decay_changes_nothing() {
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut s = scalar_store(1.25, 0.0);
    let mut buf = zero_buffers(&s);
    for _ in 0..3 {
        sgd_step(&mut s, &mut buf, 0.1, &cfg).unwrap();
    }
    assert_eq!(value(&s), 1.25);
}

#[test]
fn two_nesterov_steps_match_the_expansion() {
    let (lr, mu, wd) = (0.1, 0.9, 0.01);
    let cfg = TrainConfig { momentum: mu, weight_decay: wd, ..TrainConfig::default() };
    let (p0, g0, g1) = (2.0, 0.5, -0.3);
    let mut s = scalar_store(p0, g0);
    let mut buf = zero_buffers(&s);
    sgd_step(&mut s, &mut buf, lr, &cfg).unwrap();
    s.iter_mut().next().unwrap().grad = Tensor::scalar(g1);
    sgd_step(&mut s, &mut buf, lr, &cfg).unwrap();

    let d0 = g0 + wd * p0;
    let b0 = d0;
    let p1 = p0 - lr * (d0 + mu * b0);
    let d1 = g1 + wd * p1;
    let b1 = mu * b0 + d1;
    let p2 = p1 - lr * (d1 + mu * b1);
    assert!((value(&s) - p2).abs() < 1e-15, "{} vs {p2}", value(&s));
    assert!((buf[0].item() - b1).abs() < 1e-15);

    // Plain momentum for contrast: p -= lr * buf.
    let cfg = TrainConfig { nesterov: false, ..cfg };
    let mut s = scalar_store(p0, g0);
    let mut buf = zero_buffers(&s);
    sgd_step(&mut s, &mut buf, lr, &cfg).unwrap();
    assert!((value(&s) - (p0 - lr * d0)).abs() < 1e-15);
}

#[test]
fn decay_alone_shrinks_geometrically() {
    let (lr, mu, wd) = (0.1, 0.9, 0.0004);
    let cfg = TrainConfig { momentum: mu, weight_decay: wd, ..TrainConfig::default() };
    let mut s = scalar_store(3.0, 0.0);
    let mut buf = zero_buffers(&s);
    sgd_step(&mut s, &mut buf, lr, &cfg).unwrap();
    assert!((value(&s) - 3.0 * (1.0 - lr * wd * (1.0 + mu))).abs() < 1e-15);
}

#[test]
fn non_finite_gradients_name_the_parameter() {
    let mut s = scalar_store(1.0, 0.0);
    s.add("block3.gc.adj.0.1", Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap(), true).unwrap();
    s.iter_mut().nth(1).unwrap().grad = Tensor::from_f64(&[2], &[1.0, f64::NAN]).unwrap();
    let mut buf = zero_buffers(&s);
    match sgd_step(&mut s, &mut buf, 0.1, &TrainConfig::default()) {
        Err(HdError::Numerical(msg)) => assert!(msg.contains("block3.gc.adj.0.1"), "{msg}"),
        other => panic!("expected a numerical error, got {other:?}"),
    }
    assert_eq!(value(&s), 1.0, "nothing moves on failure");
}

#[test]
fn frozen_and_excluded_parameters() {
    let mut s: ParamStore<f64> = ParamStore::new();
    s.add("bn.running_mean", Tensor::scalar(1.0), false).unwrap();
    s.add("bn.gamma", Tensor::scalar(1.0), true).unwrap();
    s.add("fc.weight", Tensor::scalar(1.0), true).unwrap();
    let cfg = TrainConfig { weight_decay_exclude: vec!["bn.".into()], momentum: 0.0, ..TrainConfig::default() };
    let mut buf = zero_buffers(&s);
    sgd_step(&mut s, &mut buf, 0.5, &cfg).unwrap();
    let v: Vec<f64> = s.iter().map(|p| p.value.item()).collect();
    assert_eq!(v[0], 1.0);
    assert_eq!(v[1], 1.0);
    assert!((v[2] - (1.0 - 0.5 * 0.0004)).abs() < 1e-15);
}

/// With a frozen gradient, the difference between a step with and without
/// weight decay is exactly `lr * wd * param` for every trainable tensor.
#[test]
fn weight_decay_probe_on_a_model() {
    let mut model = Model::<f64>::new(&ModelConfig::micro(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in model.store.iter_mut() {
        p.grad = Tensor::from_fn(p.value.shape(), |_| rng.gen_range(-1.0..1.0));
    }
    let (lr, wd) = (0.05, 0.0004);
    let run = |wd: f64| {
        let mut store = model.store.clone();
        let mut buf = zero_buffers(&store);
        let cfg = TrainConfig { weight_decay: wd, momentum: 0.0, ..TrainConfig::default() };
        sgd_step(&mut store, &mut buf, lr, &cfg).unwrap();
        store
    };
    let (with, without) = (run(wd), run(0.0));
    let mut checked = 0;
    for ((p, a), b) in model.store.iter().zip(with.iter()).zip(without.iter()) {
        for ((&x, &ya), &yb) in p.value.data().iter().zip(a.value.data()).zip(b.value.data()) {
            let want = if p.trainable { -lr * wd * x } else { 0.0 };
            assert!(((ya - yb) - want).abs() <= 1e-15 * (1.0 + x.abs()), "{}", p.name);
        }
        checked += p.trainable as usize;
    }
    assert!(checked > 20);
}

fn batch_loss(model: &mut Model<f32>, ds: &Dataset, idx: &[usize]) -> f64 {
    let b = ds.batch::<f32>(idx);
    let mut s = Session::new(&mut model.store, true);
    let x = s.input(b.x);
    let out = model.net.forward(&mut s, &x).unwrap();
    out.logits.softmax_cross_entropy(&b.labels, 0.0).unwrap().value().item() as f64
}

#[test]
fn one_step_on_one_batch_descends() {
    let ds = toy_set(2, Split::Train);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for seed in 0..3 {
        let mut model = Model::<f32>::new(&ModelConfig::toy(), seed).unwrap();
        let before = batch_loss(&mut model, &ds, &idx);
        let cfg = TrainConfig { epochs: 10, batch_size: ds.len(), seed, ..TrainConfig::default() };
        let mut t = Trainer::new(model, cfg, None).unwrap();
        t.fit(&ds, None, 1).unwrap();
        assert_eq!(t.state.step, 1);
        let after = batch_loss(&mut t.model, &ds, &idx);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn adjacency_receives_gradients() {
    let ds = toy_set(1, Split::Train);
    let mut model = Model::<f32>::new(&ModelConfig::toy(), 0).unwrap();
    let b = ds.batch::<f32>(&(0..ds.len()).collect::<Vec<_>>());
    let mut s = Session::new(&mut model.store, true);
    let x = s.input(b.x);
    let loss = model.net.forward(&mut s, &x).unwrap().logits.softmax_cross_entropy(&b.labels, 0.0).unwrap();
    let g = loss.backward().unwrap();
    s.accumulate(&g);
    drop(s);
    let adj: Vec<&Parameter<f32>> = model.store.iter().filter(|p| p.name.contains(".adj.")).collect();
    assert!(!adj.is_empty());
    let moving = adj.iter().filter(|p| p.grad.max_abs() > 0.0).count();
    assert_eq!(moving, adj.len(), "every adjacency tensor gets a gradient");

    // And training actually moves them.
    let before: Vec<Tensor<f32>> = adj.iter().map(|p| p.value.clone()).collect();
    let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 4, ..TrainConfig::default() };
    let mut t = Trainer::new(Model::<f32>::new(&ModelConfig::toy(), 0).unwrap(), cfg, None).unwrap();
    t.fit(&ds, None, 1).unwrap();
    let after = t.model.store.iter().filter(|p| p.name.contains(".adj."));
    assert!(after.zip(&before).all(|(p, b)| p.value != *b));
}

fn small_run(dir: Option<&std::path::Path>, seed: u64, until: usize) -> Trainer<f32> {
    let ds = toy_set(2, Split::Train);
    let cfg = TrainConfig { epochs: 4, warmup_epochs: 1, batch_size: 5, seed, crop_ratio: Some(0.8), ..TrainConfig::default() };
    let model = Model::<f32>::new(&ModelConfig { dropout: 0.2, ..ModelConfig::toy() }, seed).unwrap();
    let mut t = Trainer::new(model, cfg, dir).unwrap();
    t.fit(&ds, None, until).unwrap();
    t
}

fn param_bits(t: &Trainer<f32>) -> Vec<u32> {
    t.model.store.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let a = small_run(None, 7, 2);
    let b = small_run(None, 7, 2);
    assert_eq!(param_bits(&a), param_bits(&b));
    assert_eq!(a.state.history, b.state.history);
    let c = small_run(None, 8, 2);
    assert_ne!(param_bits(&a), param_bits(&c));
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let (full_dir, part_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = small_run(Some(full_dir.path()), 3, 4);
    drop(small_run(Some(part_dir.path()), 3, 2));

    let ds = toy_set(2, Split::Train);
    let mut resumed = Trainer::<f32>::resume(part_dir.path()).unwrap();
    assert_eq!(resumed.state.epoch, 2);
    resumed.fit(&ds, None, 4).unwrap();
    assert_eq!(param_bits(&resumed), param_bits(&full));
    assert_eq!(resumed.state, full.state);
    for f in ["metrics.csv", "state.json", "last.hdt", "momentum.hdt", "summary.json"] {
        assert_eq!(
            std::fs::read(full_dir.path().join(f)).unwrap(),
            std::fs::read(part_dir.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let train_set = toy_set(2, Split::Train);
    let test_set = toy_set(1, Split::Test);
    let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let t = train(Model::<f32>::new(&ModelConfig::toy(), 0).unwrap(), &train_set, Some(&test_set), cfg.clone(), Some(dir.path()))
        .unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,lr,loss,top1,top5");
    let logged = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(logged, t.state.history);
    for (e, m) in logged.iter().enumerate() {
        assert_eq!(m.epoch, e);
        assert_eq!(m.lr, lr_at(e, &cfg).unwrap());
        assert!(m.top1 <= m.top5 && (0.0..=1.0).contains(&m.top1));
    }
    for f in ["best.hdt", "best.hdt.json", "last.hdt", "last.hdt.json", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let best = t.state.best_epoch.unwrap();
    assert_eq!(t.state.best_top1, logged[best].top1);
    assert!(logged.iter().all(|m| m.top1 <= t.state.best_top1));
    let reloaded = Model::<f32>::load(dir.path().join("last.hdt")).unwrap();
    assert!(reloaded.store.iter().zip(t.model.store.iter()).all(|(a, b)| a.value == b.value));
}

#[test]
fn mismatched_data_is_rejected() {
    let ds = toy_set(1, Split::Train);
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, ..TrainConfig::default() };
    let wrong_window = ModelConfig { window: 8, ..ModelConfig::toy() };
    let mut t = Trainer::new(Model::<f32>::new(&wrong_window, 0).unwrap(), cfg.clone(), None).unwrap();
    assert!(matches!(t.fit(&ds, None, 1), Err(HdError::Data(_))));
    let wrong_classes = ModelConfig { num_classes: 5, ..ModelConfig::toy() };
    let mut t = Trainer::new(Model::<f32>::new(&wrong_classes, 0).unwrap(), cfg, None).unwrap();
    assert!(matches!(t.fit(&ds, None, 1), Err(HdError::Data(_))));
}
