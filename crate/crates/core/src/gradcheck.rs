//! Finite-difference gradient suites over every differentiable op and the
//! composed layers, run at `f64`.

use hdgcn_tensor::gradcheck::{check_gradients, check_store_gradients, GradCheckOptions, GradCheckReport};
use hdgcn_tensor::{ParamStore, Result as TResult, Session, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aha::{aggregate, Aha, AhaConfig, Pooling};
use crate::error::{config, Result};
use crate::graph::{build_hd, decompose, normalize, GraphKind, NormScope, Orientation};
use crate::hdgc::{HdgcConfig, HdgcLayer};
use crate::network::{Model, ModelConfig, TemporalModule};
use crate::topology::SkeletonTopology;

pub const TOLERANCE: f64 = 1e-4;

/// Step 1e-5. Gradients below 1e-4 in magnitude are judged on absolute
/// error, since f64 roundoff in a batch-normalized forward pass is ~1e-9
/// per evaluation. Entries over tolerance get the small-step retry that
/// steps off ReLU/max switching points.
pub fn options() -> GradCheckOptions {
    GradCheckOptions { floor: 1e-4, refine_above: Some(TOLERANCE), ..GradCheckOptions::default() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ops,
    Hdgc,
    Aha,
    Network,
    All,
}

impl std::str::FromStr for Suite {
    type Err = crate::HdError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ops" | "tensor" => Suite::Ops,
            "hdgc" => Suite::Hdgc,
            "aha" => Suite::Aha,
            "network" => Suite::Network,
            "all" => Suite::All,
            _ => return Err(config(format!("unknown gradcheck module `{s}` (ops, hdgc, aha, network, all)"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub report: GradCheckReport,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err <= TOLERANCE
    }
}

type OpFn = Box<dyn Fn(&Tape<f64>, &[Var<f64>]) -> TResult<Var<f64>>>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// A shuffled grid over [-1, 1]. No two entries are closer than 2/numel, so
/// max pooling never sits within a finite-difference step of a tie.
fn spaced_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("shape matches")
}

/// One random instance of each op.
fn op_instances(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let mut v: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = Vec::new();
    let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
    v.push(("matmul", vec![rand_t(rng, &[2, m, k]), rand_t(rng, &[k, n])], Box::new(|_, x| x[0].matmul(&x[1]))));
    let (ci, co, t) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(5..10));
    let kernel = [1, 3, 5][rng.gen_range(0..3)];
    let (dil, stride) = (rng.gen_range(1..3), rng.gen_range(1..3));
    v.push((
        "temporal_conv",
        vec![rand_t(rng, &[2, ci, t, 3]), rand_t(rng, &[co, ci, kernel])],
        Box::new(move |_, x| x[0].temporal_conv(&x[1], dil, stride)),
    ));
    v.push((
        "pointwise_conv",
        vec![rand_t(rng, &[2, ci, 3, 4]), rand_t(rng, &[co, ci])],
        Box::new(|_, x| x[0].pointwise_conv(&x[1])),
    ));
    let axis = rng.gen_range(0..3);
    v.push(("reduce_sum", vec![rand_t(rng, &[2, 3, 4])], Box::new(move |_, x| x[0].sum_axis(axis, false))));
    v.push(("reduce_mean", vec![rand_t(rng, &[2, 3, 4])], Box::new(move |_, x| x[0].mean_axis(axis, true))));
    v.push(("reduce_max", vec![rand_t(rng, &[2, 3, 4])], Box::new(move |_, x| x[0].max_axis(axis, false))));
    v.push(("relu", vec![rand_t(rng, &[3, 4])], Box::new(|_, x| Ok(x[0].relu()))));
    v.push(("sigmoid", vec![rand_t(rng, &[3, 4])], Box::new(|_, x| Ok(x[0].sigmoid()))));
    v.push((
        "add_sub_mul",
        vec![rand_t(rng, &[2, 3, 4]), rand_t(rng, &[3, 1])],
        Box::new(|_, x| x[0].add(&x[1])?.mul(&x[0])?.sub(&x[1])),
    ));
    let c = rng.gen_range(1..4);
    v.push((
        "batch_norm",
        vec![rand_t(rng, &[3, c, 2, 3]), rand_t(rng, &[c]), rand_t(rng, &[c])],
        Box::new(|_, x| Ok(x[0].batch_norm(&x[1], &x[2], None, 1e-5)?.0)),
    ));
    v.push((
        "concat",
        vec![rand_t(rng, &[2, 2, 3]), rand_t(rng, &[2, 1, 3])],
        Box::new(|_, x| Var::concat(&[x[0].clone(), x[1].clone()], 1)),
    ));
    let classes = rng.gen_range(2..6);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..classes)).collect();
    v.push((
        "softmax_cross_entropy",
        vec![rand_t(rng, &[4, classes]).map(|x| 3.0 * x)],
        Box::new(move |_, x| x[0].softmax_cross_entropy(&labels, 0.0)),
    ));
    v.push((
        "max_pool_time",
        vec![rand_t(rng, &[2, 2, 7, 3])],
        Box::new(move |_, x| x[0].max_pool_time(3, stride)),
    ));
    let nb: Vec<usize> = (0..2 * 4 * 3).map(|_| rng.gen_range(0..4)).collect();
    v.push((
        "gather_neighbors",
        vec![rand_t(rng, &[2, 3, 4])],
        Box::new(move |_, x| x[0].gather_neighbors(&nb, 3)),
    ));
    v
}

fn merge(checks: &mut Vec<Check>, name: &str, report: GradCheckReport) {
    match checks.iter_mut().find(|c| c.name == name) {
        Some(c) => c.report.merge(&report),
        None => checks.push(Check { name: name.to_string(), report }),
    }
}

/// Every op on `instances` random small shapes; reports merged per op.
pub fn ops(instances: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, inputs, f) in op_instances(&mut rng) {
            let r = check_gradients(&inputs, |t, x| f(t, x), options())?;
            merge(&mut checks, name, r);
        }
    }
    Ok(checks)
}

fn micro_graph() -> Result<(crate::graph::HierarchyDecomposition, crate::graph::Adjacency)> {
    let topo = SkeletonTopology::micro5();
    let decomp = decompose(&topo, 2)?;
    let adj = normalize(&build_hd(&topo, &decomp, GraphKind::HdFc, Orientation::Assignment)?, NormScope::PerSubset);
    Ok((decomp, adj))
}

/// Checks parameters and the input (registered as a trainable parameter).
fn check_layer<F>(store: &mut ParamStore<f64>, x: Tensor<f64>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_, f64>, &Var<f64>) -> crate::Result<Var<f64>>,
{
    let input = store.add("input", x, true)?;
    let report = check_store_gradients(
        store,
        |s| {
            let x = s.param(input);
            f(s, &x).map_err(|e| hdgcn_tensor::TensorError::Data(e.to_string()))
        },
        options(),
    )?;
    Ok(report)
}

/// HD-GC forward (all variants), S-EdgeConv alone and the temporal module.
pub fn hdgc(instances: u64) -> Result<Vec<Check>> {
    let (_, adj) = micro_graph()?;
    let mut checks = Vec::new();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s_edge in [false, true] {
            let mut store = ParamStore::new();
            let cfg = HdgcConfig { c_in: 3, c_out: 8, knn_k: 2, s_edgeconv: s_edge };
            let layer = HdgcLayer::new(&mut store, "gc", cfg, &adj, &mut rng)?;
            let x = spaced_t(&mut rng, &[2, 3, 4, 5]);
            let r = check_layer(&mut store, x, |s, x| layer.forward(s, x))?;
            merge(&mut checks, if s_edge { "hdgc_forward_s_edgeconv" } else { "hdgc_forward" }, r);
            if s_edge {
                let x = spaced_t(&mut rng, &[2, 3, 4, 5]);
                let mut fresh = ParamStore::new();
                let layer2 = HdgcLayer::new(&mut fresh, "gc", layer.config.clone(), &adj, &mut rng)?;
                let r = check_layer(&mut fresh, x, |s, x| layer2.s_edgeconv(s, x, 1))?;
                merge(&mut checks, "s_edgeconv", r);
            }
        }
        let mut store = ParamStore::new();
        let tm = TemporalModule::new(&mut store, "tcn", 8, 1 + (seed as usize % 2), true, &mut rng)?;
        let x = spaced_t(&mut rng, &[2, 8, 7, 3]);
        let r = check_layer(&mut store, x, |s, x| tm.forward(s, x))?;
        merge(&mut checks, "temporal_module", r);
    }
    Ok(checks)
}

/// Pooling, attention and aggregation for every A-HA mode.
pub fn aha(instances: u64) -> Result<Vec<Check>> {
    let (decomp, _) = micro_graph()?;
    let n_l = decomp.n_l();
    let mut checks = Vec::new();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pooling in [Pooling::Sap, Pooling::Rsap] {
            for h_edgeconv in [false, true] {
                for per_channel in [true, false] {
                    let mut store = ParamStore::new();
                    let cfg = AhaConfig { pooling, h_edgeconv, h_knn_k: 1, per_channel };
                    let aha = Aha::new(&mut store, "aha", cfg, &decomp, 4, &mut rng)?;
                    let x = spaced_t(&mut rng, &[2, 4, n_l, 3, 5]);
                    let r = check_layer(&mut store, x, |s, x| Ok(aha.forward(s, x)?.0))?;
                    let name = match (pooling, h_edgeconv) {
                        (Pooling::Sap, false) => "aha_sap",
                        (Pooling::Sap, true) => "aha_sap_h_edgeconv",
                        (_, false) => "aha_rsap",
                        (_, true) => "aha_rsap_h_edgeconv",
                    };
                    merge(&mut checks, name, r);
                }
            }
        }
        let stack = spaced_t(&mut rng, &[2, 3, n_l, 2, 5]);
        let m = rand_t(&mut rng, &[2, 3, n_l]);
        let r = check_gradients(
            &[stack, m],
            |_, v| aggregate(&v[0], &v[1]).map_err(|e| hdgcn_tensor::TensorError::Data(e.to_string())),
            options(),
        )?;
        merge(&mut checks, "aha_aggregate", r);
    }
    Ok(checks)
}

/// The composed micro-model (5 joints, 8 frames, 2 blocks), checked
/// end to end through the cross-entropy loss for several variants.
pub fn network(instances: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let variants: [(&str, fn(&mut ModelConfig)); 3] = [
        ("micro_model", |_| {}),
        ("micro_model_pc_sap", |c| {
            c.graph.kind = GraphKind::HdPc;
            c.aha.pooling = Pooling::Sap;
        }),
        ("micro_model_conventional", |c| c.graph.kind = GraphKind::Conventional),
    ];
    for seed in 0..instances {
        for (name, tweak) in variants {
            let mut cfg = ModelConfig::micro();
            tweak(&mut cfg);
            let mut model = Model::<f64>::new(&cfg, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = rand_t(&mut rng, &[3, 1, 3, cfg.window, 5]);
            let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
            let Model { net, store } = &mut model;
            // The graph initialization has exact zeros, so a joint can be 0 in
            // every frame and the max over frames ties. Check at a generic
            // point instead.
            for p in store.iter_mut().filter(|p| p.name.contains(".adj.")) {
                p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            }
            let r = check_layer(store, x, |s, x| {
                let out = net.forward(s, x)?;
                Ok(out.logits.softmax_cross_entropy(&labels, 0.0)?)
            })?;
            merge(&mut checks, name, r);
        }
    }
    Ok(checks)
}

/// Runs a suite with the given number of random instances per check.
pub fn run(suite: Suite, instances: u64) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Ops => ops(instances)?,
        Suite::Hdgc => hdgc(instances)?,
        Suite::Aha => aha(instances)?,
        Suite::Network => network(instances)?,
        Suite::All => {
            let mut all = ops(instances)?;
            all.extend(hdgc(instances)?);
            all.extend(aha(instances)?);
            all.extend(network(instances)?);
            all
        }
    })
}
