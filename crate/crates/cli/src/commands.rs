use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hdgcn::data::synthetic::SyntheticSpec;
use hdgcn::data::{derive_stream, Dataset, DatasetManifest, SkeletonSequence};
use hdgcn::ensemble::{evaluate, Accuracy, EnsembleSpec, EvalReport, MemberReport};
use hdgcn::gradcheck::{self, Suite, TOLERANCE};
use hdgcn::graph::{build_conventional, build_hd, decompose, normalize, to_dot, GraphKind, NormScope, Orientation};
use hdgcn::network::{complexity, Model, ModelConfig};
use hdgcn::topology::SkeletonTopology;
use hdgcn::training::Trainer;
use hdgcn::{HdError, Result};
use hdgcn_tensor::ops::softmax_rows;
use hdgcn_tensor::{checkpoint, Real, Tensor};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{merge, read_json, RunConfig};
use crate::{
    Cli, Command, ConvertArgs, DataCommand, EnsembleArgs, EvalArgs, FlopsArgs, GenerateArgs, GlobalArgs, GradcheckArgs,
    GraphBuildArgs, GraphCommand, NormArg, Precision, TrainArgs, Variant,
};

const RUN_CONFIG: &str = "config.json";

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Graph(GraphCommand::Build(a)) => graph_build(a, g),
        Command::Data(DataCommand::Generate(a)) => generate(a, g),
        Command::Data(DataCommand::Convert(a)) => convert(a, g),
        Command::Train(a) => train(a, g),
        Command::Eval(a) => match g.precision.unwrap_or_default() {
            Precision::F32 => eval::<f32>(a, g),
            Precision::F64 => eval::<f64>(a, g),
        },
        Command::Ensemble(a) => ensemble(a, g),
        Command::Gradcheck(a) => gradcheck(a, g),
        Command::Flops(a) => flops(a, g),
    }
}

fn print_config<T: Serialize>(g: &GlobalArgs, args: &T) {
    if g.print_config {
        let v = json!({ "global": g, "command": args });
        println!("{}", serde_json::to_string_pretty(&v).expect("arguments serialize"));
    }
}

fn note(g: &GlobalArgs, msg: impl AsRef<str>) {
    if !g.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn pretty<T: Serialize>(x: &T) -> String {
    serde_json::to_string_pretty(x).expect("reports serialize") + "\n"
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn graph_build(a: &GraphBuildArgs, g: &GlobalArgs) -> Result<()> {
    print_config(g, a);
    let topo = SkeletonTopology::builtin(&a.topology)?;
    let decomp = decompose(&topo, topo.com_joint(a.com)?)?;
    let raw = match a.variant {
        Variant::Conventional => build_conventional(&topo, Orientation::Assignment),
        Variant::Pc => build_hd(&topo, &decomp, GraphKind::HdPc, Orientation::Assignment)?,
        Variant::Fc => build_hd(&topo, &decomp, GraphKind::HdFc, Orientation::Assignment)?,
    };
    let scope = match a.norm {
        NormArg::PerSubset => NormScope::PerSubset,
        NormArg::Pooled => NormScope::Pooled,
    };
    let adj = normalize(&raw, scope);
    if let Some(p) = &a.export_dot {
        fs::write(p, to_dot(&topo, &decomp, &raw))?;
    }
    if let Some(p) = &a.export_json {
        fs::write(p, decomp.to_json() + "\n")?;
    }
    if let Some(p) = &a.export_adjacency {
        checkpoint::save(p, &[("adjacency".to_string(), adj.tensor.cast::<f32>())])?;
    }
    let edges: Vec<usize> = (0..raw.layers()).map(|l| raw.nonzeros(l, 1).len()).collect();
    print!(
        "{}",
        pretty(&json!({
            "topology": topo.name,
            "com": decomp.com,
            "variant": a.variant,
            "n_h": decomp.n_h(),
            "n_l": decomp.n_l(),
            "sets": decomp.sets,
            "adjacency_shape": adj.tensor.shape(),
            "centripetal_edges_per_layer": edges,
        }))
    );
    Ok(())
}

fn generate(a: &GenerateArgs, g: &GlobalArgs) -> Result<()> {
    let mut v = serde_json::to_value(SyntheticSpec::default()).expect("spec serializes");
    if let Some(p) = &a.config {
        merge(&mut v, read_json(p)?);
    }
    merge(
        &mut v,
        json!({
            "classes": a.classes,
            "train_per_class": a.train_per_class,
            "test_per_class": a.test_per_class,
            "noise": a.noise,
            "frames": a.frames,
            "seed": g.seed,
        }),
    );
    let spec: SyntheticSpec = serde_json::from_value(v).map_err(|e| HdError::Config(format!("generator settings: {e}")))?;
    spec.validate()?;
    if g.print_config {
        print!("{}", pretty(&spec));
    }
    let (train, test) = spec.write(&a.out)?;
    note(g, format!("wrote {} training and {} test sequences to {}", spec.classes * spec.train_per_class, spec.classes * spec.test_per_class, a.out.display()));
    print!("{}", pretty(&json!({ "train": train, "test": test })));
    Ok(())
}

fn convert(a: &ConvertArgs, g: &GlobalArgs) -> Result<()> {
    print_config(g, a);
    let seq = SkeletonSequence::load(&a.input)?;
    let out = match a.stream {
        Some(s) if s != seq.stream => {
            let topo = SkeletonTopology::builtin(a.topology.as_deref().unwrap_or(&seq.topology))?;
            derive_stream(&seq, s, &topo, topo.com_joint(a.com)?)?
        }
        _ => seq,
    };
    out.save(&a.output)
}

fn train(a: &TrainArgs, g: &GlobalArgs) -> Result<()> {
    let cfg = if a.resume {
        let given = a.config.is_some()
            || a.data.is_some()
            || a.eval.is_some()
            || a.preset.is_some()
            || a.stream.is_some()
            || a.com.is_some()
            || a.epochs.is_some()
            || a.warmup_epochs.is_some()
            || a.batch_size.is_some()
            || a.lr_max.is_some()
            || g.seed.is_some()
            || g.precision.is_some();
        if given {
            return Err(HdError::Config(format!(
                "--resume continues under {}; only --out and --stop-after apply",
                a.out.join(RUN_CONFIG).display()
            )));
        }
        let text = fs::read_to_string(a.out.join(RUN_CONFIG))?;
        serde_json::from_str::<RunConfig>(&text)?
    } else {
        RunConfig::resolve(a, g.seed, g.precision)?
    };
    if g.print_config {
        print!("{}\n", cfg.to_json());
    }
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, a, g),
        Precision::F64 => train_as::<f64>(&cfg, a, g),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, a: &TrainArgs, g: &GlobalArgs) -> Result<()> {
    let data = cfg.data.as_ref().ok_or_else(|| HdError::Config("no training data: pass --data or set `data`".into()))?;
    let topo = cfg.model.topology()?;
    let com = topo.com_joint(cfg.model.com)?;
    let open = |p: &Path| Dataset::open(p, &topo, cfg.stream, com, cfg.model.window);
    let train_set = open(data)?;
    let eval_set = cfg.eval.as_deref().map(open).transpose()?;
    let mut trainer = if a.resume {
        Trainer::<T>::resume(&a.out)?
    } else {
        fs::create_dir_all(&a.out)?;
        fs::write(a.out.join(RUN_CONFIG), cfg.to_json() + "\n")?;
        Trainer::new(Model::<T>::new(&cfg.model, cfg.train.seed)?, cfg.train.clone(), Some(&a.out))?
    };
    let until = a.stop_after.unwrap_or(cfg.train.epochs).min(cfg.train.epochs);
    while trainer.state.epoch < until {
        let e = trainer.state.epoch + 1;
        trainer.fit(&train_set, eval_set.as_ref(), e)?;
        let m = trainer.state.history.last().expect("an epoch was recorded");
        note(
            g,
            format!("epoch {:>3}  lr {:.6}  loss {:.4}  top1 {:.4}  top5 {:.4}", m.epoch + 1, m.lr, m.loss, m.top1, m.top5),
        );
    }
    let s = &trainer.state;
    print!(
        "{}",
        pretty(&json!({
            "out": a.out,
            "epochs_done": s.epoch,
            "epochs": s.config.epochs,
            "best_top1": s.best_top1,
            "best_epoch": s.best_epoch,
            "last": s.history.last(),
        }))
    );
    Ok(())
}

fn eval<T: Real>(a: &EvalArgs, g: &GlobalArgs) -> Result<()> {
    print_config(g, a);
    if a.batch_size == 0 {
        return Err(HdError::Config("batch size must be positive".into()));
    }
    let mut model = Model::<T>::load(&a.checkpoint)?;
    let cfg = model.config().clone();
    let topo = cfg.topology()?;
    let (manifest, seqs) = DatasetManifest::load_all(&a.data)?;
    if manifest.classes.len() != cfg.num_classes {
        return Err(HdError::Data(format!("checkpoint has {} classes, data has {}", cfg.num_classes, manifest.classes.len())));
    }
    let ds = Dataset::prepare(seqs, manifest.classes.clone(), &topo, a.stream, topo.com_joint(cfg.com)?, cfg.window)?;
    let k = cfg.num_classes;
    let mut scores = Vec::with_capacity(ds.len() * k);
    let mut rows: Vec<String> = Vec::new();
    for idx in ds.batches(a.batch_size, None::<&mut rand_chacha::ChaCha8Rng>) {
        let batch = ds.batch::<T>(&idx);
        let (logits, maps) = model.predict(&batch.x)?;
        scores.extend(softmax_rows(&logits).data().iter().map(|v| v.as_f64()));
        if a.dump_attention.is_some() {
            attention_rows(&idx, ds.persons, &maps, &mut rows);
        }
    }
    let scores = Tensor::new(&[ds.len(), k], scores).map_err(HdError::from)?;
    let accuracy = Accuracy::of(&scores, ds.labels(), &manifest.classes);
    let report = EvalReport {
        samples: ds.len(),
        classes: manifest.classes.clone(),
        accuracy: accuracy.clone(),
        members: vec![MemberReport { checkpoint: a.checkpoint.clone(), stream: a.stream, com: cfg.com, weight: 1.0, accuracy }],
    };
    if let Some(p) = &a.dump_attention {
        let mut f = fs::File::create(p)?;
        writeln!(f, "sample,person,block,layer,score")?;
        for r in rows {
            writeln!(f, "{r}")?;
        }
    }
    note(g, format!("top1 {:.4}  top5 {:.4} over {} samples", report.accuracy.top1, report.accuracy.top5, report.samples));
    write_or_print(a.report.as_deref(), &pretty(&report))
}

/// One row per sample, person, block and hierarchy layer; the score is the
/// mean of the map over channels.
fn attention_rows<T: Real>(idx: &[usize], persons: usize, maps: &[Option<Tensor<T>>], rows: &mut Vec<String>) {
    for (n, &sample) in idx.iter().enumerate() {
        for p in 0..persons {
            for (b, m) in maps.iter().enumerate() {
                let Some(m) = m else { continue };
                let (c, l) = (m.shape()[1], m.shape()[2]);
                let row = n * persons + p;
                for layer in 0..l {
                    let sum: f64 = (0..c).map(|ch| m.data()[(row * c + ch) * l + layer].as_f64()).sum();
                    rows.push(format!("{sample},{p},{b},{layer},{}", sum / c as f64));
                }
            }
        }
    }
}

fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn ensemble(a: &EnsembleArgs, g: &GlobalArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| HdError::Config(format!("{}: {e}", a.spec.display())))?;
    let mut spec = EnsembleSpec::from_json(&text)?;
    let base = a.spec.parent().unwrap_or(Path::new(""));
    for m in &mut spec.members {
        m.checkpoint = resolve_against(base, &m.checkpoint);
    }
    if g.print_config {
        print!("{}", pretty(&json!({ "global": g, "command": a, "spec": spec })));
    }
    if a.batch_size == 0 {
        return Err(HdError::Config("batch size must be positive".into()));
    }
    let (manifest, seqs) = DatasetManifest::load_all(&a.data)?;
    let report = evaluate(&spec, &seqs, &manifest.classes, a.batch_size)?;
    for m in &report.members {
        note(g, format!("{} ({} {}): top1 {:.4}", m.checkpoint.display(), m.stream.name(), m.com.name(), m.accuracy.top1));
    }
    note(g, format!("ensemble: top1 {:.4}  top5 {:.4}", report.accuracy.top1, report.accuracy.top5));
    if let Some(p) = &a.per_class_csv {
        fs::write(p, report.per_class_csv()?)?;
    }
    write_or_print(a.report.as_deref(), &pretty(&report))
}

fn gradcheck(a: &GradcheckArgs, g: &GlobalArgs) -> Result<()> {
    print_config(g, a);
    let suite: Suite = a.module.parse()?;
    if a.instances == 0 {
        return Err(HdError::Config("at least one instance per check".into()));
    }
    let checks = gradcheck::run(suite, a.instances)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<32} {:>10.3e} over {:>6} entries  {verdict}", c.name, c.report.max_rel_err, c.report.checked);
        if !c.passed() {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        note(g, format!("{} checks within {TOLERANCE:e}", checks.len()));
        Ok(())
    } else {
        Err(HdError::Numerical(format!("relative error above {TOLERANCE:e} in {}", failed.join(", "))))
    }
}

fn flops(a: &FlopsArgs, g: &GlobalArgs) -> Result<()> {
    print_config(g, a);
    let cfg = match (&a.preset, &a.config) {
        (Some(name), _) => ModelConfig::preset(name)?,
        (None, Some(p)) => {
            let v: Value = read_json(p)?;
            serde_json::from_value::<ModelConfig>(v).map_err(|e| HdError::Config(format!("{}: {e}", p.display())))?
        }
        (None, None) => unreachable!("clap requires one of --preset and --config"),
    };
    print!("{}", pretty(&complexity(&cfg)?));
    Ok(())
}
