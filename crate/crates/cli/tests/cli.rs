use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use hdgcn_cli::Cli;
use serde_json::Value;

fn hdgcn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdgcn")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hdgcn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    hdgcn(dir, args).status.code().unwrap()
}

/// Every file under `dir` by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn subcommand_paths(cmd: &clap::Command, prefix: Vec<String>, out: &mut Vec<(Vec<String>, clap::Command)>) {
    out.push((prefix.clone(), cmd.clone()));
    for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
        let mut p = prefix.clone();
        p.push(sub.get_name().to_string());
        subcommand_paths(sub, p, out);
    }
}

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut root = Cli::command();
    root.build();
    let mut paths = Vec::new();
    subcommand_paths(&root, Vec::new(), &mut paths);
    assert!(paths.len() >= 10, "{} commands", paths.len());
    for (path, cmd) in paths {
        let mut args: Vec<&str> = path.iter().map(String::as_str).collect();
        args.push("--help");
        let help = ok(dir.path(), &args);
        let table: BTreeSet<String> = cmd.get_arguments().filter_map(|a| a.get_long().map(|l| format!("--{l}"))).collect();
        for a in cmd.get_arguments() {
            let long = a.get_long().unwrap_or_else(|| panic!("{path:?}: argument {} has no long flag", a.get_id()));
            assert!(help.contains(&format!("--{long}")), "{path:?} --help omits --{long}");
            let text = a.get_help().map(|h| h.to_string()).unwrap_or_default();
            assert!(!text.trim().is_empty(), "{path:?}: --{long} has no description");
        }
        // Nothing in the help text that the flag table does not know.
        for word in help.split(|c: char| c.is_whitespace() || c == ',' || c == '[' || c == ']' || c == '<' || c == '|') {
            if let Some(flag) = word.strip_prefix("--").filter(|w| !w.is_empty()) {
                let flag = format!("--{}", flag.trim_end_matches(|c: char| !c.is_alphanumeric()));
                assert!(table.contains(&flag), "{path:?} --help mentions unknown {flag}");
            }
        }
        if !path.is_empty() {
            for global in ["--seed", "--precision", "--quiet", "--print-config"] {
                assert!(help.contains(global), "{path:?} --help omits {global}");
            }
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["flops", "--preset", "toy", "--bogus"]), 1);
    assert_eq!(code(d, &["flops"]), 1);
    assert_eq!(code(d, &["flops", "--preset", "toy", "--config", "x.json"]), 1);
    assert_eq!(code(d, &["graph", "build", "--com", "neck"]), 1);
    assert_eq!(code(d, &["graph", "build", "--variant", "dense"]), 1);
    assert_eq!(code(d, &["train"]), 1);
    assert_eq!(code(d, &["nonsense"]), 1);
    assert_eq!(code(d, &[]), 1);
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
}

#[test]
fn graph_build_exports_the_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let summary: Value = serde_json::from_str(&ok(
        d,
        &["graph", "build", "--topology", "ntu25", "--com", "belly", "--variant", "fc", "--export-dot", "g.dot", "--export-json", "g.json", "--export-adjacency", "a.hdt"],
    ))
    .unwrap();
    assert_eq!(summary["n_h"], 7);
    assert_eq!(summary["n_l"], 6);
    assert_eq!(summary["adjacency_shape"], serde_json::json!([6, 3, 25, 25]));

    let expect: Vec<BTreeSet<usize>> = [
        vec![2],
        vec![1, 21],
        vec![13, 17, 3, 5, 9],
        vec![14, 18, 4, 6, 10],
        vec![15, 19, 7, 11],
        vec![16, 20, 8, 12],
        vec![22, 23, 24, 25],
    ]
    .into_iter()
    .map(|s| s.into_iter().collect())
    .collect();

    // One cluster per set, in order, and FC edges only between adjacent sets.
    let dot = std::fs::read_to_string(d.join("g.dot")).unwrap();
    let mut clusters = Vec::new();
    let mut lines = dot.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("subgraph cluster_h") {
            lines.next();
            let nodes = lines.next().unwrap().trim().trim_end_matches(';');
            clusters.push(nodes.split("; ").map(|n| n.parse().unwrap()).collect::<BTreeSet<usize>>());
        }
    }
    assert_eq!(clusters, expect);
    let level: BTreeMap<usize, usize> = expect.iter().enumerate().flat_map(|(k, s)| s.iter().map(move |&j| (j, k))).collect();
    let mut edges = 0;
    for line in dot.lines().filter(|l| l.contains("->")) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (p, c): (usize, usize) = (parts[0].parse().unwrap(), parts[2].parse().unwrap());
        assert_eq!(level[&c], level[&p] + 1, "{line}");
        edges += 1;
    }
    let fc: usize = expect.windows(2).map(|w| w[0].len() * w[1].len()).sum();
    assert_eq!(edges, fc);

    let json: Value = serde_json::from_str(&std::fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    let sets: Vec<BTreeSet<usize>> = serde_json::from_value(json["sets"].clone()).unwrap();
    assert_eq!(sets, expect);
    let adj = hdgcn_tensor::checkpoint::load(d.join("a.hdt")).unwrap();
    assert_eq!(adj[0].1.shape(), &[6, 3, 25, 25]);

    // The PC variant draws exactly the 24 bones.
    ok(d, &["graph", "build", "--variant", "pc", "--export-dot", "pc.dot"]);
    let pc = std::fs::read_to_string(d.join("pc.dot")).unwrap();
    assert_eq!(pc.lines().filter(|l| l.contains("->")).count(), 24);
}

#[test]
fn flops_preset_reports_published_size() {
    let dir = tempfile::tempdir().unwrap();
    let r: Value = serde_json::from_str(&ok(dir.path(), &["flops", "--preset", "ntu120-joint"])).unwrap();
    let params = r["param_count"].as_f64().unwrap();
    assert!((params / 1.68e6 - 1.0).abs() <= 0.10, "{params}");
    assert!(r["convention"].as_str().unwrap().contains("multiply-accumulates"));
    // A checkpoint sidecar is a valid --config.
    std::fs::write(dir.path().join("m.json"), r#"{"num_classes": 120}"#).unwrap();
    let c: Value = serde_json::from_str(&ok(dir.path(), &["flops", "--config", "m.json"])).unwrap();
    assert_eq!(c, r);
    std::fs::write(dir.path().join("typo.json"), r#"{"num_clases": 120}"#).unwrap();
    assert_eq!(code(dir.path(), &["flops", "--config", "typo.json"]), 2);
}

#[test]
fn gradcheck_all_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--module", "all", "--instances", "1", "--quiet"]);
    assert!(out.lines().count() >= 20);
    assert!(out.lines().all(|l| l.ends_with(" ok")), "{out}");
    assert_eq!(code(dir.path(), &["gradcheck", "--module", "everything"]), 2);
}

const TINY: [&str; 8] = ["--classes", "8", "--train-per-class", "3", "--test-per-class", "2", "--frames", "24"];

fn generate(d: &Path, out: &str, seed: &str) {
    let mut args = vec!["data", "generate", "--out", out, "--seed", seed, "--quiet"];
    args.extend(TINY);
    ok(d, &args);
}

#[test]
fn generation_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a", "5");
    generate(d, "b", "5");
    generate(d, "c", "6");
    let (a, b, c) = (tree(&d.join("a")), tree(&d.join("b")), tree(&d.join("c")));
    assert_eq!(a.len(), 8 * 5 + 2);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn flags_override_files_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.json"), r#"{"classes": 3, "noise": 0.0, "train_per_class": 2, "test_per_class": 1}"#).unwrap();
    let out = ok(d, &["data", "generate", "--out", "g", "--config", "gen.json", "--classes", "4", "--print-config", "--quiet"]);
    let spec: Value = serde_json::from_str(&out[..out.find("}\n").unwrap() + 1]).unwrap();
    assert_eq!(spec["classes"], 4);
    assert_eq!(spec["noise"], 0.0);
    assert_eq!(spec["frames"], 64);
    assert_eq!(spec["seed"], 0);

    generate(d, "syn", "1");
    std::fs::write(
        d.join("run.json"),
        r#"{"preset": "toy", "data": "syn/train.json", "train": {"epochs": 4, "warmup_epochs": 1, "batch_size": 6}, "model": {"dropout": 0.1}}"#,
    )
    .unwrap();
    ok(d, &["train", "--config", "run.json", "--epochs", "2", "--out", "r", "--quiet", "--seed", "3"]);
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["epochs"], 2);
    assert_eq!(cfg["train"]["batch_size"], 6);
    assert_eq!(cfg["train"]["seed"], 3);
    assert_eq!(cfg["train"]["lr_max"], 0.1);
    assert_eq!(cfg["model"]["dropout"], 0.1);
    assert_eq!(cfg["model"]["window"], 16);
    assert_eq!(cfg["stream"], "joint");

    std::fs::write(d.join("bad.json"), r#"{"preset": "toy", "train": {"epoch": 2}}"#).unwrap();
    assert_eq!(code(d, &["train", "--config", "bad.json", "--data", "syn/train.json", "--out", "x", "--quiet"]), 2);
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec![
        "train", "--preset", "toy", "--data", "syn/train.json", "--eval", "syn/test.json", "--out", out, "--epochs", "3",
        "--warmup-epochs", "1", "--batch-size", "5", "--seed", "4", "--quiet",
    ];
    a.extend(extra);
    a
}

#[test]
fn runs_are_bytewise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "syn", "2");
    ok(d, &train_args("a", &[]));
    ok(d, &train_args("b", &[]));
    let (a, b) = (tree(&d.join("a")), tree(&d.join("b")));
    for f in ["last.hdt", "best.hdt", "momentum.hdt", "metrics.csv", "state.json", "summary.json", "config.json"] {
        assert!(a.contains_key(f), "{f}");
    }
    assert_eq!(a, b);

    for (report, att) in [("e1.json", "a1.csv"), ("e2.json", "a2.csv")] {
        ok(d, &["eval", "--checkpoint", "a/last.hdt", "--data", "syn/test.json", "--report", report, "--dump-attention", att, "--quiet"]);
    }
    assert_eq!(std::fs::read(d.join("e1.json")).unwrap(), std::fs::read(d.join("e2.json")).unwrap());
    let att = std::fs::read_to_string(d.join("a1.csv")).unwrap();
    assert_eq!(att, std::fs::read_to_string(d.join("a2.csv")).unwrap());
    // 16 test samples, 1 person, 3 blocks, 6 layers.
    assert_eq!(att.lines().count(), 1 + 16 * 3 * 6);
    assert!(att.lines().skip(1).all(|l| {
        let s: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        s > 0.0 && s < 1.0
    }));

    std::fs::write(
        d.join("ens.json"),
        r#"{"members": [{"checkpoint": "a/last.hdt", "stream": "joint", "com": "belly"}, {"checkpoint": "b/best.hdt", "stream": "joint", "com": "belly"}], "weights": [1.0, 0.5]}"#,
    )
    .unwrap();
    for (r, c) in [("r1.json", "c1.csv"), ("r2.json", "c2.csv")] {
        ok(d, &["ensemble", "--spec", "ens.json", "--data", "syn/test.json", "--report", r, "--per-class-csv", c, "--quiet"]);
    }
    assert_eq!(std::fs::read(d.join("r1.json")).unwrap(), std::fs::read(d.join("r2.json")).unwrap());
    assert_eq!(std::fs::read(d.join("c1.csv")).unwrap(), std::fs::read(d.join("c2.csv")).unwrap());
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("r1.json")).unwrap()).unwrap();
    assert_eq!(report["members"].as_array().unwrap().len(), 2);
    assert_eq!(report["members"][1]["weight"], 0.5);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "syn", "2");
    ok(d, &train_args("full", &[]));
    ok(d, &train_args("part", &["--stop-after", "1"]));
    assert!(!d.join("part/summary.json").exists());
    assert_eq!(code(d, &["train", "--resume", "--out", "part", "--epochs", "5"]), 2);
    ok(d, &["train", "--resume", "--out", "part", "--quiet"]);
    assert_eq!(tree(&d.join("full")), tree(&d.join("part")));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "syn", "2");
    assert_eq!(code(d, &["train", "--preset", "toy", "--data", "missing.json", "--out", "x", "--quiet"]), 2);
    assert_eq!(code(d, &["train", "--preset", "ntu60-joint", "--data", "syn/train.json", "--out", "x", "--quiet"]), 2);
    assert_eq!(code(d, &["eval", "--checkpoint", "none.hdt", "--data", "syn/test.json"]), 2);
    let diverge = train_args("boom", &["--lr-max", "1e30"]);
    let out = hdgcn(d, &diverge);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn convert_round_trips_and_derives_streams() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "syn", "2");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(d.join("syn/train.json")).unwrap()).unwrap();
    let first = format!("syn/{}", manifest["samples"][0]["file"].as_str().unwrap());
    ok(d, &["data", "convert", "--input", &first, "--output", "s.json"]);
    ok(d, &["data", "convert", "--input", "s.json", "--output", "s.hds"]);
    assert_eq!(std::fs::read(d.join(&first)).unwrap(), std::fs::read(d.join("s.hds")).unwrap());
    ok(d, &["data", "convert", "--input", "s.hds", "--output", "b.json", "--stream", "bone", "--com", "hip"]);
    let b: Value = serde_json::from_str(&std::fs::read_to_string(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(b["stream"], "bone");
    assert_eq!(code(d, &["data", "convert", "--input", "b.json", "--output", "bb.json", "--stream", "joint"]), 2);
}
