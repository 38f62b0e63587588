//! Score fusion over models trained on different streams and CoM graphs,
//! and the accuracy reports shared with training.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hdgcn_tensor::ops::softmax_rows;
use hdgcn_tensor::{Real, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SkeletonSequence, Stream};
use crate::error::{config, data, HdError, Result};
use crate::network::Model;
use crate::topology::ComRole;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub checkpoint: PathBuf,
    pub stream: Stream,
    pub com: ComRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<Member>,
    /// One per member; all 1.0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<Member>) -> Self {
        Self { members, weights: None }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.members.len()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(config("an ensemble needs at least one member"));
        }
        check_weights(&self.weights(), self.members.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

fn check_weights(w: &[f64], members: usize) -> Result<()> {
    if w.len() != members {
        return Err(config(format!("{} weights for {members} members", w.len())));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(config("weights must be finite and non-negative"));
    }
    if w.iter().all(|&x| x == 0.0) {
        return Err(config("weights are all zero"));
    }
    Ok(())
}

/// Index of each row's maximum; ties go to the lowest index.
pub fn argmax_rows(scores: &Tensor<f64>) -> Vec<usize> {
    let k = scores.shape()[1];
    scores
        .data()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best }))
        .collect()
}

/// Weighted sum of `[samples, classes]` score arrays and its argmax.
///
/// Each entry sums its member terms in sorted order, so the result does not
/// depend on member order.
pub fn fuse(scores: &[Tensor<f64>], weights: &[f64]) -> Result<(Tensor<f64>, Vec<usize>)> {
    let first = scores.first().ok_or_else(|| config("nothing to fuse"))?;
    check_weights(weights, scores.len())?;
    if first.rank() != 2 {
        return Err(data(format!("scores must be [samples, classes], got {:?}", first.shape())));
    }
    if let Some(bad) = scores.iter().find(|s| s.shape() != first.shape()) {
        return Err(data(format!("score shapes differ: {:?} vs {:?}", first.shape(), bad.shape())));
    }
    let mut terms = vec![0.0; scores.len()];
    let fused = Tensor::from_fn(first.shape(), |i| {
        for (t, (s, &w)) in terms.iter_mut().zip(scores.iter().zip(weights)) {
            *t = w * s.data()[i];
        }
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    });
    let pred = argmax_rows(&fused);
    Ok((fused, pred))
}

/// Fraction of rows whose label is among the `k` highest scores (ties
/// broken toward lower indices, as in `argmax_rows`).
pub fn top_k(scores: &Tensor<f64>, labels: &[usize], k: usize) -> f64 {
    let c = scores.shape()[1];
    let hits = scores
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| {
            let above = row.iter().enumerate().filter(|&(j, &v)| v > row[y] || (v == row[y] && j < y)).count();
            above < k
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
    pub per_class: BTreeMap<String, f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl Accuracy {
    pub fn of(scores: &Tensor<f64>, labels: &[usize], classes: &[String]) -> Self {
        let k = classes.len();
        let pred = argmax_rows(scores);
        let mut confusion = vec![vec![0; k]; k];
        for (&y, &p) in labels.iter().zip(&pred) {
            confusion[y][p] += 1;
        }
        // Classes absent from the labels have no accuracy.
        let per_class = classes
            .iter()
            .enumerate()
            .filter_map(|(y, name)| {
                let n: usize = confusion[y].iter().sum();
                (n > 0).then(|| (name.clone(), confusion[y][y] as f64 / n as f64))
            })
            .collect();
        Self { top1: top_k(scores, labels, 1), top5: top_k(scores, labels, 5), per_class, confusion }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub checkpoint: PathBuf,
    pub stream: Stream,
    pub com: ComRole,
    pub weight: f64,
    pub accuracy: Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub classes: Vec<String>,
    #[serde(flatten)]
    pub accuracy: Accuracy,
    pub members: Vec<MemberReport>,
}

impl EvalReport {
    /// `class,<overall>,<member 0>,...` rows of per-class accuracy.
    pub fn per_class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string(), "ensemble".to_string()];
        header.extend(self.members.iter().map(|m| format!("{}-{}", m.stream.name(), m.com.name())));
        w.write_record(&header).map_err(csv_err)?;
        for c in &self.classes {
            let mut row = vec![c.clone(), cell(self.accuracy.per_class.get(c))];
            row.extend(self.members.iter().map(|m| cell(m.accuracy.per_class.get(c))));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
    }
}

fn cell(v: Option<&f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub(crate) fn csv_err(e: csv::Error) -> HdError {
    data(format!("csv: {e}"))
}

/// Softmax scores `[samples, classes]` of a model over a prepared dataset,
/// in evaluation mode.
pub fn predict_probs<T: Real>(model: &mut Model<T>, ds: &Dataset, batch_size: usize) -> Result<Tensor<f64>> {
    let k = model.config().num_classes;
    let mut out = Vec::with_capacity(ds.len() * k);
    for idx in ds.batches(batch_size, None::<&mut rand_chacha::ChaCha8Rng>) {
        let batch = ds.batch::<T>(&idx);
        let (logits, _) = model.predict(&batch.x)?;
        out.extend(softmax_rows(&logits).data().iter().map(|v| v.as_f64()));
    }
    Ok(Tensor::new(&[ds.len(), k], out)?)
}

/// Scores every member on its own stream and CoM, fuses and reports.
/// Members are evaluated in parallel; each loads its own checkpoint.
pub fn evaluate(
    spec: &EnsembleSpec,
    seqs: &[SkeletonSequence],
    classes: &[String],
    batch_size: usize,
) -> Result<EvalReport> {
    spec.validate()?;
    let labels: Vec<usize> = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| s.label.ok_or_else(|| data(format!("sample {i} has no label"))))
        .collect::<Result<_>>()?;
    let scores: Vec<Tensor<f64>> = spec
        .members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            member_scores(m, seqs, classes, batch_size)
                .map_err(|e| data(format!("member {i} ({}, {} {}): {e}", m.checkpoint.display(), m.stream.name(), m.com.name())))
        })
        .collect::<Result<_>>()?;
    let weights = spec.weights();
    let (fused, _) = fuse(&scores, &weights)?;
    let members = spec
        .members
        .iter()
        .zip(&scores)
        .zip(&weights)
        .map(|((m, s), &w)| MemberReport {
            checkpoint: m.checkpoint.clone(),
            stream: m.stream,
            com: m.com,
            weight: w,
            accuracy: Accuracy::of(s, &labels, classes),
        })
        .collect();
    Ok(EvalReport {
        samples: seqs.len(),
        classes: classes.to_vec(),
        accuracy: Accuracy::of(&fused, &labels, classes),
        members,
    })
}

fn member_scores(m: &Member, seqs: &[SkeletonSequence], classes: &[String], batch_size: usize) -> Result<Tensor<f64>> {
    let mut model = Model::<f32>::load(&m.checkpoint)?;
    let cfg = model.config().clone();
    if cfg.com != m.com {
        return Err(config(format!("checkpoint was trained with CoM {}", cfg.com.name())));
    }
    if cfg.num_classes != classes.len() {
        return Err(config(format!("checkpoint has {} classes, data has {}", cfg.num_classes, classes.len())));
    }
    let topo = cfg.topology()?;
    let com = topo.com_joint(m.com)?;
    let ds = Dataset::prepare(seqs.to_vec(), classes.to_vec(), &topo, m.stream, com, cfg.window)?;
    predict_probs(&mut model, &ds, batch_size)
}
