use hdgcn::aha::Pooling;
use hdgcn::graph::GraphKind;
use hdgcn::network::{complexity, BranchOp, Model, ModelConfig, TemporalModule, FLOP_CONVENTION};
use hdgcn::HdError;
use hdgcn_tensor::{ParamStore, Session, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn input(cfg: &ModelConfig, n: usize, m: usize, seed: u64) -> Tensor<f64> {
    let v = cfg.topology().unwrap().num_joints;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, m, 3, cfg.window, v], |_| rng.gen_range(-1.0..1.0))
}

/// Small ntu25 model used where the micro skeleton is too degenerate.
fn small_ntu() -> ModelConfig {
    ModelConfig {
        num_classes: 5,
        window: 8,
        channels: vec![8, 8, 16],
        strides: vec![1, 2, 1],
        ..ModelConfig::default()
    }
}

fn variants() -> Vec<ModelConfig> {
    let mut out = vec![ModelConfig::micro(), small_ntu()];
    let tweaks: [fn(&mut ModelConfig); 8] = [
        |c| c.graph.kind = GraphKind::Conventional,
        |c| c.graph.kind = GraphKind::HdPc,
        |c| c.graph.s_edgeconv = false,
        |c| c.aha.pooling = Pooling::None,
        |c| c.aha.pooling = Pooling::Sap,
        |c| c.aha.h_edgeconv = false,
        |c| c.aha.per_channel = false,
        |c| {
            c.batch_norm = false;
            c.input_norm = false;
        },
    ];
    for t in tweaks {
        let mut c = small_ntu();
        t(&mut c);
        out.push(c);
    }
    out
}

#[test]
fn logits_shape_and_determinism() {
    let cfg = small_ntu();
    let mut model = Model::<f64>::new(&cfg, 1).unwrap();
    let one = input(&cfg, 1, 1, 2);
    let mut twice = Tensor::zeros(&[2, 1, 3, 8, 25]);
    twice.data_mut()[..one.numel()].copy_from_slice(one.data());
    twice.data_mut()[one.numel()..].copy_from_slice(one.data());
    let (logits, attention) = model.predict(&twice).unwrap();
    assert_eq!(logits.shape(), &[2, 5]);
    assert_eq!(logits.data()[..5], logits.data()[5..]);
    assert_eq!(attention.len(), 3);
    let again = Model::<f64>::new(&cfg, 1).unwrap().predict(&twice).unwrap().0;
    assert_eq!(logits, again);
}

#[test]
fn analytic_param_count_matches_the_built_model() {
    for cfg in variants().into_iter().chain([ModelConfig::preset("ntu120-joint").unwrap()]) {
        let model = Model::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(complexity(&cfg).unwrap().param_count, model.store.trainable_elements(), "{cfg:?}");
    }
}

#[test]
fn ntu120_complexity_is_in_the_published_range() {
    let r = complexity(&ModelConfig::preset("ntu120-joint").unwrap()).unwrap();
    assert_eq!((r.window, r.num_joints, r.num_classes), (64, 25, 120));
    let params = r.param_count as f64 / 1.68e6;
    let flops = r.flop_count as f64 / 1.60e9;
    assert!((0.9..=1.1).contains(&params), "params {}", r.param_count);
    assert!((0.85..=1.15).contains(&flops), "flops {}", r.flop_count);
    assert_eq!(r.convention, FLOP_CONVENTION);
}

#[test]
fn presets_share_the_block_plan() {
    for name in ["ntu60-joint", "ntu60-bone", "ntu120-joint", "ntu120-bone", "kinetics-joint", "kinetics-bone"] {
        let c = ModelConfig::preset(name).unwrap();
        assert_eq!(c.channels, vec![64, 64, 64, 128, 128, 128, 256, 256, 256]);
        assert_eq!(c.window, 64);
    }
    assert_eq!(ModelConfig::preset("kinetics-joint").unwrap().topology().unwrap().num_joints, 20);
    assert!(matches!(ModelConfig::preset("nope"), Err(HdError::Config(_))));
}

fn doubled(c: &ModelConfig) -> ModelConfig {
    ModelConfig { channels: c.channels.iter().map(|w| 2 * w).collect(), ..c.clone() }
}

/// Counts split into parts that grow with C², with C and not at all, so
/// the exact doubling ratio is `(4q + 2l + k) / (q + l + k)`.
#[test]
fn doubling_widths_follows_the_scaling_decomposition() {
    let base = ModelConfig::preset("ntu120-joint").unwrap();
    let scaled = |f: usize| complexity(&ModelConfig { channels: base.channels.iter().map(|w| f * w).collect(), ..base.clone() }).unwrap();
    let (r1, r2, r3) = (scaled(1), scaled(2), scaled(3));
    for (a, b, c) in [
        (r1.param_count as f64, r2.param_count as f64, r3.param_count as f64),
        (r1.flop_count as f64, r2.flop_count as f64, r3.flop_count as f64),
    ] {
        // Solve q + l + k = a, 4q + 2l + k = b, 9q + 3l + k = c.
        let q = (c - 2.0 * b + a) / 2.0;
        let l = b - a - 3.0 * q;
        let k = a - q - l;
        assert!(q > 0.0 && l > 0.0 && k >= 0.0, "{q} {l} {k}");
        // The decomposition predicts the 4x-width count exactly.
        let r4 = scaled(4);
        let want = 16.0 * q + 4.0 * l + k;
        let got = if a == r1.param_count as f64 { r4.param_count as f64 } else { r4.flop_count as f64 };
        assert!((got - want).abs() < 1e-6 * want);
        let ratio = b / a;
        assert!(ratio > 3.5 && ratio < 4.0, "ratio {ratio}");
    }
}

#[test]
#[ignore = "doubling gives 3.77x params and 3.63x FLOPs; the V x V graph terms scale linearly in C"]
fn doubling_widths_quadruples_counts_within_five_percent() {
    let base = ModelConfig::preset("ntu120-joint").unwrap();
    let (a, b) = (complexity(&base).unwrap(), complexity(&doubled(&base)).unwrap());
    let p = b.param_count as f64 / a.param_count as f64;
    let f = b.flop_count as f64 / a.flop_count as f64;
    assert!((p / 4.0 - 1.0).abs() <= 0.05, "param ratio {p}");
    assert!((f / 4.0 - 1.0).abs() <= 0.05, "flop ratio {f}");
}

#[test]
fn stride_two_blocks_halve_frames_and_keep_residual_shapes() {
    let cfg = ModelConfig { strides: vec![2, 1, 2], channels: vec![8, 8, 12], ..ModelConfig::micro() };
    let mut model = Model::<f64>::new(&cfg, 0).unwrap();
    let x = input(&cfg, 2, 1, 0);
    let mut s = Session::new(&mut model.store, false);
    let xv = s.input(x);
    let out = model.net.forward(&mut s, &xv).unwrap();
    assert_eq!(out.block_shapes, vec![vec![2, 8, 4, 5], vec![2, 8, 4, 5], vec![2, 12, 2, 5]]);
}

#[test]
fn checkpoint_reload_reproduces_logits_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hdt");
    let cfg = small_ntu();
    let mut model = Model::<f32>::new(&cfg, 3).unwrap();
    // Make the running statistics non-trivial first.
    let x: Tensor<f32> = input(&cfg, 2, 1, 4).cast();
    {
        let mut s = Session::new(&mut model.store, true);
        let xv = s.input(x.clone());
        model.net.forward(&mut s, &xv).unwrap();
    }
    model.save(&path).unwrap();
    let mut back = Model::<f32>::load(&path).unwrap();
    assert_eq!(back.config(), &cfg);
    let (a, b) = (model.predict(&x).unwrap().0, back.predict(&x).unwrap().0);
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn aha_none_changes_only_attention_parameters() {
    let with = small_ntu();
    let without = ModelConfig { aha: hdgcn::aha::AhaConfig { pooling: Pooling::None, ..with.aha.clone() }, ..with.clone() };
    let shapes = |cfg: &ModelConfig| -> Vec<(String, Vec<usize>)> {
        let m = Model::<f32>::new(cfg, 0).unwrap();
        m.store.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect()
    };
    let (a, b) = (shapes(&with), shapes(&without));
    let a_rest: Vec<_> = a.iter().filter(|(n, _)| !n.contains(".aha.")).cloned().collect();
    assert_eq!(a_rest, b);
    assert!(a.len() > b.len());
    assert!(b.iter().all(|(n, _)| !n.contains(".aha.")));
}

#[test]
fn persons_are_averaged() {
    let cfg = small_ntu();
    let mut model = Model::<f64>::new(&cfg, 5).unwrap();
    let x = input(&cfg, 1, 2, 6);
    let half = x.numel() / 2;
    let p0 = Tensor::new(&[1, 1, 3, 8, 25], x.data()[..half].to_vec()).unwrap();
    let p1 = Tensor::new(&[1, 1, 3, 8, 25], x.data()[half..].to_vec()).unwrap();
    let both = model.predict(&x).unwrap().0;
    let (a, b) = (model.predict(&p0).unwrap().0, model.predict(&p1).unwrap().0);
    for i in 0..5 {
        assert!((both.data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn mismatched_input_is_a_data_error() {
    let cfg = small_ntu();
    let mut model = Model::<f64>::new(&cfg, 0).unwrap();
    for shape in [vec![1, 1, 3, 8, 24], vec![1, 1, 3, 9, 25], vec![1, 3, 8, 25]] {
        let err = model.predict(&Tensor::zeros(&shape)).unwrap_err();
        assert!(matches!(err, HdError::Data(_)), "{err}");
    }
}

#[test]
fn config_validation() {
    let bad = [
        ModelConfig { channels: vec![8, 10], ..ModelConfig::micro() },
        ModelConfig { strides: vec![1, 3], ..ModelConfig::micro() },
        ModelConfig { strides: vec![1], ..ModelConfig::micro() },
        ModelConfig { dropout: 1.0, ..ModelConfig::micro() },
        ModelConfig { topology: "nowhere".into(), ..ModelConfig::micro() },
    ];
    for cfg in bad {
        assert!(Model::<f32>::new(&cfg, 0).is_err(), "{cfg:?}");
    }
    let cfg = ModelConfig::micro();
    assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

fn temporal(c: usize, stride: usize) -> (ParamStore<f64>, TemporalModule) {
    let mut store = ParamStore::new();
    let tm = TemporalModule::new(&mut store, "tcn", c, stride, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (store, tm)
}

/// `[C/4, C]` selecting the first `C/4` channels.
fn select_first(c: usize) -> Tensor<f64> {
    Tensor::from_fn(&[c / 4, c], |i| if i % c == i / c { 1.0 } else { 0.0 })
}

#[test]
fn pointwise_branch_passes_constant_signal_through() {
    let (mut store, tm) = temporal(8, 1);
    store.get_mut(tm.branches[3].reduce.w).value = select_first(8);
    let x = Tensor::from_fn(&[1, 8, 6, 3], |i| 0.5 + (i / 18) as f64);
    let mut s = Session::new(&mut store, false);
    let xv = s.input(x.clone());
    let y = tm.forward(&mut s, &xv).unwrap();
    assert_eq!(y.shape(), &[1, 8, 6, 3]);
    for c in 0..2 {
        for t in 0..6 {
            for v in 0..3 {
                assert_eq!(y.value().get(&[0, 6 + c, t, v]), x.get(&[0, c, t, v]));
            }
        }
    }
}

#[test]
fn dilation_two_branch_impulse_spans_four_frames() {
    let (mut store, tm) = temporal(4, 1);
    store.get_mut(tm.branches[1].reduce.w).value = select_first(4);
    let BranchOp::Conv(conv) = &tm.branches[1].op else { panic!("branch 1 is a convolution") };
    assert_eq!(conv.dilation, 2);
    store.get_mut(conv.w).value = Tensor::ones(&[1, 1, 5]);
    let (t, at) = (13, 6);
    let mut x = Tensor::zeros(&[1, 4, t, 1]);
    x.set(&[0, 0, at, 0], 1.0);
    let mut s = Session::new(&mut store, false);
    let xv = s.input(x);
    let y = tm.forward(&mut s, &xv).unwrap();
    let hit: Vec<usize> = (0..t).filter(|&f| y.value().get(&[0, 1, f, 0]) != 0.0).collect();
    assert_eq!(hit, vec![at - 4, at - 2, at, at + 2, at + 4]);
}

#[test]
fn temporal_module_geometry() {
    for (stride, t_out) in [(1, 7), (2, 4)] {
        let (mut store, tm) = temporal(12, stride);
        let mut s = Session::new(&mut store, false);
        let xv = s.input(Tensor::ones(&[2, 12, 7, 3]));
        assert_eq!(tm.forward(&mut s, &xv).unwrap().shape(), &[2, 12, t_out, 3]);
    }
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(TemporalModule::new(&mut store, "a", 8, 3, true, &mut rng), Err(HdError::Config(_))));
    assert!(matches!(TemporalModule::new(&mut store, "b", 6, 1, true, &mut rng), Err(HdError::Config(_))));
}
