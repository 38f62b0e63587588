//! SGD with Nesterov momentum, coupled weight decay and a warmup plus
//! cosine learning-rate schedule; checkpointing and exact resume.

use std::path::{Path, PathBuf};

use hdgcn_tensor::checkpoint;
use hdgcn_tensor::{ParamStore, Real, Session, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{csv_err, predict_probs, top_k};
use crate::error::{config, data, HdError, Result};
use crate::network::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Parameters whose name contains any of these get no weight decay.
    pub weight_decay_exclude: Vec<String>,
    pub batch_size: usize,
    pub seed: u64,
    pub label_smoothing: f64,
    /// Random temporal crop of at least this fraction of each sequence
    /// before windowing; off by default.
    pub crop_ratio: Option<f64>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            warmup_epochs: 5,
            lr_max: 0.1,
            lr_min: 0.0001,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0004,
            weight_decay_exclude: Vec::new(),
            batch_size: 64,
            seed: 0,
            label_smoothing: 0.0,
            crop_ratio: None,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr_min < self.lr_max && self.lr_min >= 0.0) {
            return Err(config(format!("need 0 <= lr_min ({}) < lr_max ({})", self.lr_min, self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config(format!("weight decay {} must be finite and non-negative", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config(format!("label smoothing {} must be in [0, 1)", self.label_smoothing)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(config("batch sizes must be positive"));
        }
        if let Some(r) = self.crop_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(config(format!("crop ratio {r} must be in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn decays(&self, name: &str) -> bool {
        !self.weight_decay_exclude.iter().any(|pat| name.contains(pat.as_str()))
    }
}

/// Learning rate of `epoch` (0-based): a linear ramp reaching `lr_max` at
/// the end of warmup, then cosine annealing down to `lr_min` at the last
/// epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(config(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    let w = cfg.warmup_epochs;
    if epoch < w {
        return Ok(cfg.lr_max * (epoch + 1) as f64 / w as f64);
    }
    let span = cfg.epochs - 1 - w;
    let progress = if span == 0 { 0.0 } else { (epoch - w) as f64 / span as f64 };
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One optimizer step over the store's accumulated gradients.
///
/// `g = grad + wd * p`, `buf = momentum * buf + g`, then
/// `p -= lr * (g + momentum * buf)` (Nesterov) or `p -= lr * buf`.
/// `buffers` holds one tensor per parameter, in store order.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, buffers: &mut [Tensor<T>], lr: f64, cfg: &TrainConfig) -> Result<()> {
    if buffers.len() != store.len() {
        return Err(config(format!("{} momentum buffers for {} parameters", buffers.len(), store.len())));
    }
    // Check everything first so a bad gradient leaves the parameters untouched.
    for p in store.iter().filter(|p| p.trainable) {
        if !p.grad.all_finite() {
            return Err(HdError::Numerical(format!("non-finite gradient in {}", p.name)));
        }
    }
    let (lr, mu) = (T::of(lr), T::of(cfg.momentum));
    for (p, buf) in store.iter_mut().zip(buffers.iter_mut()) {
        if !p.trainable {
            continue;
        }
        if buf.shape() != p.value.shape() {
            return Err(config(format!("momentum buffer for {} has shape {:?}", p.name, buf.shape())));
        }
        let wd = T::of(if cfg.decays(&p.name) { cfg.weight_decay } else { 0.0 });
        for ((w, &g), b) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(buf.data_mut()) {
            let g = g + wd * *w;
            *b = mu * *b + g;
            let step = if cfg.nesterov { g + mu * *b } else { *b };
            *w -= lr * step;
        }
    }
    Ok(())
}

pub fn zero_buffers<T: Real>(store: &ParamStore<T>) -> Vec<Tensor<T>> {
    store.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// On the evaluation set when one is given, else on the training set.
    pub top1: f64,
    pub top5: f64,
}

/// Everything besides the weights and momentum needed to continue a run.
/// Shuffling, cropping and dropout draw from streams derived from the seed
/// and the epoch or step counter, so no generator state is stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_top1: f64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochMetrics>,
    pub config: TrainConfig,
}

pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub state: TrainState,
    buffers: Vec<Tensor<T>>,
    out: Option<PathBuf>,
}

const LAST: &str = "last.hdt";
const BEST: &str = "best.hdt";
const MOMENTUM: &str = "momentum.hdt";
const STATE: &str = "state.json";
const METRICS: &str = "metrics.csv";
const SUMMARY: &str = "summary.json";

impl<T: Real> Trainer<T> {
    /// `out`, when given, receives checkpoints, metrics and state after
    /// every epoch; failing to write them is an error.
    pub fn new(model: Model<T>, cfg: TrainConfig, out: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        let buffers = zero_buffers(&model.store);
        let state = TrainState { epoch: 0, step: 0, best_top1: 0.0, best_epoch: None, history: Vec::new(), config: cfg };
        Ok(Self { model, state, buffers, out: out.map(Path::to_path_buf) })
    }

    /// Continues a run from the last checkpoint in `dir`. Exact for `f32`
    /// runs; checkpoints store `f32` values.
    pub fn resume(dir: &Path) -> Result<Self> {
        let state: TrainState = serde_json::from_str(&std::fs::read_to_string(dir.join(STATE))?)?;
        let model = Model::<f32>::load(dir.join(LAST))?;
        let mut model = Model { net: model.net, store: model.store.cast::<T>() };
        let named = checkpoint::load(dir.join(MOMENTUM))?;
        let mut buffers = zero_buffers(&model.store);
        for ((name, t), (p, b)) in named.iter().zip(model.store.iter().zip(buffers.iter_mut())) {
            if *name != p.name || t.shape() != p.value.shape() {
                return Err(data(format!("momentum file does not match parameter {}", p.name)));
            }
            *b = t.cast();
        }
        model.store.zero_grad();
        Ok(Self { model, state, buffers, out: Some(dir.to_path_buf()) })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    /// Trains until `state.epoch == until` (capped at the configured epochs).
    pub fn fit(&mut self, train: &Dataset, eval: Option<&Dataset>, until: usize) -> Result<&[EpochMetrics]> {
        if train.is_empty() {
            return Err(data("training set is empty"));
        }
        let net = &self.model.net;
        if train.topology.name != net.topology.name || train.window != net.config.window {
            return Err(data(format!(
                "dataset ({}, window {}) does not match the model ({}, window {})",
                train.topology.name, train.window, net.topology.name, net.config.window
            )));
        }
        if train.num_classes() != net.config.num_classes {
            return Err(data(format!("dataset has {} classes, model {}", train.num_classes(), net.config.num_classes)));
        }
        let until = until.min(self.state.config.epochs);
        while self.state.epoch < until {
            let m = self.epoch(train, eval)?;
            self.state.history.push(m);
            self.state.epoch += 1;
            self.persist()?;
        }
        Ok(&self.state.history)
    }

    fn epoch(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<EpochMetrics> {
        let cfg = self.state.config.clone();
        let epoch = self.state.epoch;
        let lr = lr_at(epoch, &cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut total = 0.0;
        let batches = train.batches(cfg.batch_size, Some(&mut rng));
        let mut hits = (0.0, 0.0);
        for idx in &batches {
            let batch = match cfg.crop_ratio {
                Some(r) => train.cropped_batch::<T>(idx, r, &mut rng)?,
                None => train.batch::<T>(idx),
            };
            self.model.store.zero_grad();
            let mut s = Session::new(&mut self.model.store, true).with_seed(cfg.seed ^ self.state.step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let x = s.input(batch.x);
            let out = self.model.net.forward(&mut s, &x)?;
            let loss = out.logits.softmax_cross_entropy(&batch.labels, cfg.label_smoothing)?;
            let value = loss.value().item().as_f64();
            if !value.is_finite() {
                return Err(HdError::Numerical(format!("loss became {value} at epoch {epoch}")));
            }
            let grads = loss.backward()?;
            s.accumulate(&grads);
            let probs = Tensor::<f64>::from_fn(out.logits.shape(), |i| out.logits.value().data()[i].as_f64());
            drop(s);
            let n = idx.len() as f64;
            hits.0 += top_k(&probs, &batch.labels, 1) * n;
            hits.1 += top_k(&probs, &batch.labels, 5) * n;
            total += value * n;
            sgd_step(&mut self.model.store, &mut self.buffers, lr, &cfg)?;
            self.state.step += 1;
        }
        self.model.store.zero_grad();
        let loss = total / train.len() as f64;
        let (top1, top5) = match eval {
            Some(ds) => {
                let p = predict_probs(&mut self.model, ds, cfg.eval_batch_size)?;
                (top_k(&p, ds.labels(), 1), top_k(&p, ds.labels(), 5))
            }
            None => (hits.0 / train.len() as f64, hits.1 / train.len() as f64),
        };
        Ok(EpochMetrics { epoch, lr, loss, top1, top5 })
    }

    fn persist(&mut self) -> Result<()> {
        let last = self.state.history.last().expect("an epoch ran").clone();
        let improved = self.state.best_epoch.is_none() || last.top1 > self.state.best_top1;
        if improved {
            self.state.best_top1 = last.top1;
            self.state.best_epoch = Some(last.epoch);
        }
        let Some(dir) = self.out.clone() else { return Ok(()) };
        let f32_model = Model { net: self.model.net.clone(), store: self.model.store.cast::<f32>() };
        f32_model.save(dir.join(LAST))?;
        if improved {
            f32_model.save(dir.join(BEST))?;
        }
        let named: Vec<(String, Tensor<f32>)> =
            self.model.store.iter().zip(&self.buffers).map(|(p, b)| (p.name.clone(), b.cast())).collect();
        checkpoint::save(dir.join(MOMENTUM), &named)?;
        std::fs::write(dir.join(STATE), serde_json::to_string_pretty(&self.state)?)?;
        write_metrics(&dir.join(METRICS), &self.state.history)?;
        if self.state.epoch == self.state.config.epochs {
            let summary = serde_json::json!({
                "epochs": self.state.epoch,
                "steps": self.state.step,
                "best_top1": self.state.best_top1,
                "best_epoch": self.state.best_epoch,
                "final": last,
            });
            std::fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&summary)?)?;
        }
        Ok(())
    }
}

pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for m in history {
        w.serialize(m).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Trains a fresh run to completion.
pub fn train<T: Real>(
    model: Model<T>,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: TrainConfig,
    out: Option<&Path>,
) -> Result<Trainer<T>> {
    let epochs = cfg.epochs;
    let mut t = Trainer::new(model, cfg, out)?;
    t.fit(train, eval, epochs)?;
    Ok(t)
}
