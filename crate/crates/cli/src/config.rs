//! Layered JSON configuration: defaults, then a file, then flags.

use std::path::{Path, PathBuf};

use hdgcn::data::Stream;
use hdgcn::network::ModelConfig;
use hdgcn::training::TrainConfig;
use hdgcn::{HdError, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{Precision, TrainArgs};

/// Everything a training run needs; stored as `config.json` in the run
/// directory so `--resume` can rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub data: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub stream: Stream,
    pub precision: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Recursively overlays `top` on `base`: objects merge key by key, any
/// other value replaces. `null` in `top` leaves `base` alone.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, t) => *b = t,
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| HdError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HdError::Config(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("configs serialize")
}

impl RunConfig {
    pub fn resolve(args: &TrainArgs, seed: Option<u64>, precision: Option<Precision>) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_json(p)?,
            None => Value::Object(Map::new()),
        };
        let preset = args.preset.clone().or_else(|| file.get("preset").and_then(Value::as_str).map(String::from));
        let model = match &preset {
            Some(name) => ModelConfig::preset(name)?,
            None => ModelConfig::default(),
        };
        let mut v = to_value(&RunConfig {
            preset: None,
            data: None,
            eval: None,
            stream: Stream::Joint,
            precision: Precision::F32,
            model,
            train: TrainConfig::default(),
        });
        merge(&mut v, file);
        let flags = json!({
            "preset": preset,
            "data": args.data,
            "eval": args.eval,
            "stream": args.stream,
            "precision": precision,
            "model": { "com": args.com },
            "train": {
                "seed": seed,
                "epochs": args.epochs,
                "warmup_epochs": args.warmup_epochs,
                "batch_size": args.batch_size,
                "lr_max": args.lr_max,
            },
        });
        merge(&mut v, flags);
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| HdError::Config(format!("run configuration: {e}")))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }
}
