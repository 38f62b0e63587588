//! Full model: input normalization, spatial-temporal blocks, pooling and
//! classifier, plus the analytic parameter/FLOP counter.

use std::path::Path;

use hdgcn_tensor::checkpoint;
use hdgcn_tensor::{ParamStore, Real, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aha::{Aha, AhaConfig, Pooling};
use crate::error::{config, data, HdError, Result};
use crate::graph::{build_conventional, build_hd, decompose, normalize, GraphKind, HierarchyDecomposition, NormScope, Orientation};
use crate::hdgc::{ConventionalGc, HdgcConfig, HdgcLayer};
use crate::layers::{Linear, Norm, Pointwise, TemporalConv};
use crate::topology::{ComRole, SkeletonTopology};

pub const DEFAULT_CHANNELS: [usize; 9] = [64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_STRIDES: [usize; 9] = [1, 1, 1, 2, 1, 1, 2, 1, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphKind,
    pub s_edgeconv: bool,
    pub knn_k: usize,
    pub orientation: Orientation,
    pub norm_scope: NormScope,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            kind: GraphKind::HdFc,
            s_edgeconv: true,
            knn_k: 5,
            orientation: Orientation::Assignment,
            norm_scope: NormScope::PerSubset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Builtin topology name or JSON file path.
    pub topology: String,
    pub com: ComRole,
    pub num_classes: usize,
    pub window: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub graph: GraphConfig,
    pub aha: AhaConfig,
    pub batch_norm: bool,
    pub input_norm: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            topology: "ntu25".into(),
            com: ComRole::Belly,
            num_classes: 60,
            window: 64,
            in_channels: 3,
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            graph: GraphConfig::default(),
            aha: AhaConfig::default(),
            batch_norm: true,
            input_norm: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// Named configurations: `ntu60-joint`, `ntu120-joint`, `kinetics-joint`
    /// (bone variants share the architecture), `toy` and `micro`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ModelConfig::default();
        match name {
            "ntu60-joint" | "ntu60-bone" => Ok(base),
            "ntu120-joint" | "ntu120-bone" => Ok(ModelConfig { num_classes: 120, ..base }),
            "kinetics-joint" | "kinetics-bone" => Ok(ModelConfig {
                topology: "kinetics20".into(),
                num_classes: 400,
                ..base
            }),
            "toy" => Ok(Self::toy()),
            "micro" => Ok(Self::micro()),
            other => Err(config(format!(
                "unknown preset `{other}` (ntu60-joint, ntu120-joint, kinetics-joint and -bone variants, toy, micro)"
            ))),
        }
    }

    /// Three narrow blocks over 16 frames for the 8-class synthetic set.
    pub fn toy() -> Self {
        ModelConfig {
            num_classes: 8,
            window: 16,
            channels: vec![8, 8, 16],
            strides: vec![1, 1, 2],
            ..ModelConfig::default()
        }
    }

    /// The 5-joint, 8-frame, 2-block model used for gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            topology: "micro5".into(),
            num_classes: 3,
            window: 8,
            channels: vec![8, 12],
            strides: vec![1, 2],
            graph: GraphConfig { knn_k: 2, ..GraphConfig::default() },
            aha: AhaConfig { h_knn_k: 1, ..AhaConfig::default() },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(config(format!(
                "{} channel entries vs {} strides; need one of each per block",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % 4 != 0) {
            return Err(config(format!("block width {c} must be a positive multiple of 4")));
        }
        if let Some(s) = self.strides.iter().find(|&&s| s != 1 && s != 2) {
            return Err(config(format!("temporal stride {s} must be 1 or 2")));
        }
        if self.num_classes == 0 || self.window == 0 || self.in_channels == 0 {
            return Err(config("num_classes, window and in_channels must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<SkeletonTopology> {
        SkeletonTopology::builtin(&self.topology)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub enum BranchOp {
    Conv(TemporalConv),
    MaxPool,
    /// The reduction itself, strided.
    Point,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub reduce: Pointwise,
    pub reduce_norm: Norm,
    pub op: BranchOp,
    pub norm: Norm,
}

/// Four width-`C/4` branches along frames, concatenated back to `C`.
#[derive(Clone, Debug)]
pub struct TemporalModule {
    /// Dilation 1, dilation 2, max pool, pointwise.
    pub branches: Vec<Branch>,
    pub stride: usize,
}

impl TemporalModule {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        stride: usize,
        bn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if c % 4 != 0 {
            return Err(config(format!("temporal module width {c} must be divisible by 4")));
        }
        if stride != 1 && stride != 2 {
            return Err(config(format!("temporal stride {stride} must be 1 or 2")));
        }
        let bc = c / 4;
        let mut branches = Vec::with_capacity(4);
        for (i, kind) in ["d1", "d2", "pool", "point"].into_iter().enumerate() {
            let bname = format!("{name}.{i}");
            let reduce = Pointwise::new(store, &format!("{bname}.reduce"), c, bc, rng)?;
            let reduce_norm = Norm::new(store, &format!("{bname}.reduce_bn"), bc, bn && kind != "point")?;
            let op = match kind {
                "d1" | "d2" => {
                    let d = if kind == "d1" { 1 } else { 2 };
                    BranchOp::Conv(TemporalConv::new(store, &format!("{bname}.conv"), bc, bc, 5, d, stride, rng)?)
                }
                "pool" => BranchOp::MaxPool,
                _ => BranchOp::Point,
            };
            let norm = Norm::new(store, &format!("{bname}.bn"), bc, bn)?;
            branches.push(Branch { reduce, reduce_norm, op, norm });
        }
        Ok(Self { branches, stride })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mut outs = Vec::with_capacity(4);
        for b in &self.branches {
            let r = b.reduce.forward(s, x)?;
            let y = match &b.op {
                BranchOp::Conv(conv) => {
                    let a = b.reduce_norm.forward(s, &r)?.relu();
                    conv.forward(s, &a)?
                }
                BranchOp::MaxPool => b.reduce_norm.forward(s, &r)?.relu().max_pool_time(3, self.stride)?,
                BranchOp::Point => subsample(&r, self.stride)?,
            };
            outs.push(b.norm.forward(s, &y)?);
        }
        Ok(Var::concat(&outs, 1)?)
    }
}

/// Keeps every `stride`-th frame of `[N, C, T, V]`.
fn subsample<T: Real>(x: &Var<T>, stride: usize) -> Result<Var<T>> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let frames: Vec<usize> = (0..x.shape()[2]).step_by(stride).collect();
    Ok(x.index_select(2, &frames)?)
}

#[derive(Clone, Debug)]
enum Spatial {
    Hd { gc: HdgcLayer, aha: Aha },
    Conventional(ConventionalGc),
}

#[derive(Clone, Debug)]
struct Projection {
    conv: Pointwise,
    norm: Norm,
    stride: usize,
}

impl Projection {
    fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv.forward(s, &subsample(x, self.stride)?)?;
        self.norm.forward(s, &y)
    }
}

#[derive(Clone, Debug)]
struct Block {
    spatial: Spatial,
    spatial_norm: Norm,
    spatial_residual: Option<Projection>,
    temporal: TemporalModule,
    residual: Option<Projection>,
}

impl Block {
    fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, Option<Tensor<T>>)> {
        let (g, attention) = match &self.spatial {
            Spatial::Hd { gc, aha } => {
                let stack = gc.forward(s, x)?;
                let (g, m) = aha.forward(s, &stack)?;
                (g, m.map(|m| m.value().clone()))
            }
            Spatial::Conventional(gc) => (gc.forward(s, x)?, None),
        };
        let g = self.spatial_norm.forward(s, &g)?;
        let short = match &self.spatial_residual {
            Some(p) => p.forward(s, x)?,
            None => x.clone(),
        };
        let h = g.add(&short)?.relu();
        let y = self.temporal.forward(s, &h)?;
        let res = match &self.residual {
            Some(p) => p.forward(s, x)?,
            None => x.clone(),
        };
        Ok((y.add(&res)?.relu(), attention))
    }
}

/// Logits and, per block, the attention map `[N·M, C_m, N_L]` if any.
pub struct NetOutput<T: Real> {
    pub logits: Var<T>,
    pub attention: Vec<Option<Tensor<T>>>,
    /// `[N·M, C, T, V]` after each block.
    pub block_shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub decomposition: HierarchyDecomposition,
    input_norm: Norm,
    blocks: Vec<Block>,
    classifier: Linear,
}

impl Network {
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let topology = config.topology()?;
        let com = topology.com_joint(config.com)?;
        let decomp = decompose(&topology, com)?;
        let g = &config.graph;
        let adj = match g.kind {
            GraphKind::Conventional => build_conventional(&topology, g.orientation),
            kind => build_hd(&topology, &decomp, kind, g.orientation)?,
        };
        let adj = normalize(&adj, g.norm_scope);
        let v = topology.num_joints;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bn = config.batch_norm;
        let input_norm = Norm::new(store, "input_bn", config.in_channels * v, config.input_norm)?;
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_channels;
        for (b, (&c, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            let name = format!("block{b}");
            let spatial = match g.kind {
                GraphKind::Conventional => Spatial::Conventional(ConventionalGc::new(
                    store,
                    &format!("{name}.gc"),
                    c_in,
                    c,
                    &adj,
                    &mut rng,
                )?),
                _ => {
                    let hc = HdgcConfig { c_in, c_out: c, knn_k: g.knn_k, s_edgeconv: g.s_edgeconv };
                    let gc = HdgcLayer::new(store, &format!("{name}.gc"), hc, &adj, &mut rng)?;
                    let aha = Aha::new(store, &format!("{name}.aha"), config.aha.clone(), &decomp, c, &mut rng)?;
                    Spatial::Hd { gc, aha }
                }
            };
            let spatial_norm = Norm::new(store, &format!("{name}.gc_bn"), c, bn)?;
            let spatial_residual = if c_in != c {
                Some(Projection {
                    conv: Pointwise::new(store, &format!("{name}.gc_res"), c_in, c, &mut rng)?,
                    norm: Norm::new(store, &format!("{name}.gc_res_bn"), c, bn)?,
                    stride: 1,
                })
            } else {
                None
            };
            let temporal = TemporalModule::new(store, &format!("{name}.tcn"), c, stride, bn, &mut rng)?;
            let residual = if c_in != c || stride != 1 {
                Some(Projection {
                    conv: Pointwise::new(store, &format!("{name}.res"), c_in, c, &mut rng)?,
                    norm: Norm::new(store, &format!("{name}.res_bn"), c, bn)?,
                    stride,
                })
            } else {
                None
            };
            blocks.push(Block { spatial, spatial_norm, spatial_residual, temporal, residual });
            c_in = c;
        }
        let classifier = Linear::new(store, "fc", c_in, config.num_classes, &mut rng)?;
        Ok(Self { config: config.clone(), topology, decomposition: decomp, input_norm, blocks, classifier })
    }

    /// `x` is `[N, M, C, T, V]`; logits are `[N, classes]`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<NetOutput<T>> {
        let (n, m, c, t, v) = match *x.shape() {
            [n, m, c, t, v] => (n, m, c, t, v),
            _ => return Err(data(format!("input must be [N, M, C, T, V], got {:?}", x.shape()))),
        };
        if v != self.topology.num_joints || t != self.config.window || c != self.config.in_channels {
            return Err(data(format!(
                "input {:?} does not match {} joints, window {} and {} channels",
                x.shape(),
                self.topology.num_joints,
                self.config.window,
                self.config.in_channels
            )));
        }
        let nm = n * m;
        let mut h = x.reshape(&[nm, c, t, v])?;
        if self.input_norm.0.is_some() {
            let flat = h.permute(&[0, 3, 1, 2])?.reshape(&[nm, v * c, t])?;
            let normed = self.input_norm.forward(s, &flat)?;
            h = normed.reshape(&[nm, v, c, t])?.permute(&[0, 2, 3, 1])?;
        }
        let mut attention = Vec::with_capacity(self.blocks.len());
        let mut block_shapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, a) = block.forward(s, &h)?;
            h = y;
            attention.push(a);
            block_shapes.push(h.shape().to_vec());
        }
        let width = h.shape()[1];
        let pooled = h.mean_axis(3, false)?.mean_axis(2, false)?;
        let mut feat = pooled.reshape(&[n, m, width])?.mean_axis(1, false)?;
        if s.training() && self.config.dropout > 0.0 {
            let p = self.config.dropout;
            feat = feat.dropout(p, s.rng())?;
        }
        let logits = self.classifier.forward(s, &feat)?;
        Ok(NetOutput { logits, attention, block_shapes })
    }
}

/// A network together with its parameters.
pub struct Model<T: Real> {
    pub net: Network,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::build(config, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Inference without gradients; returns logits and attention maps.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Option<Tensor<T>>>)> {
        let mut s = Session::new(&mut self.store, false);
        let input = s.input(x.clone());
        let out = self.net.forward(&mut s, &input)?;
        Ok((out.logits.value().clone(), out.attention))
    }

    /// Writes `path` (HDT1 weights) and `path.json` (config sidecar).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.store.to_named())?;
        std::fs::write(sidecar(path), self.net.config.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar(path);
        let text = std::fs::read_to_string(&side).map_err(|e| with_path(&side, e))?;
        let cfg = ModelConfig::from_json(&text)?;
        let mut model = Self::new(&cfg, 0)?;
        let named = checkpoint::load(path).map_err(|e| match e {
            hdgcn_tensor::TensorError::Io(io) => with_path(path, io),
            other => other.into(),
        })?;
        model.store.load_named(&named)?;
        Ok(model)
    }
}

fn with_path(path: &Path, e: std::io::Error) -> HdError {
    HdError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub param_count: usize,
    pub flop_count: u64,
    pub window: usize,
    pub num_joints: usize,
    pub num_classes: usize,
    pub convention: String,
}

pub const FLOP_CONVENTION: &str = "FLOPs = 2 x multiply-accumulates of every convolution, \
graph product, EdgeConv map, attention weighting and the classifier, for one sample and one \
person; batch norm, activations, pooling and additions are excluded. Parameters count every \
trainable element including batch-norm scale and shift; running statistics are excluded.";

/// Walks the architecture without building it.
pub fn complexity(config: &ModelConfig) -> Result<ComplexityReport> {
    config.validate()?;
    let topology = config.topology()?;
    let v = topology.num_joints;
    let n_l = match config.graph.kind {
        GraphKind::Conventional => 1,
        _ => decompose(&topology, topology.com_joint(config.com)?)?.n_l(),
    };
    let bn = |c: usize| if config.batch_norm { 2 * c } else { 0 };
    let mut params = if config.input_norm { 2 * config.in_channels * v } else { 0 };
    let mut macs: u64 = 0;
    let mut t = config.window;
    let mut c_in = config.in_channels;
    let g = &config.graph;
    for (&c, &stride) in config.channels.iter().zip(&config.strides) {
        let tv = (t * v) as u64;
        match g.kind {
            GraphKind::Conventional => {
                params += 3 * c_in * c + 3 * v * v;
                macs += 3 * (c_in * v) as u64 * tv + 3 * (c_in * c) as u64 * tv;
            }
            _ => {
                let cr = c / 4;
                params += c_in * cr + n_l * 3 * (cr * cr + v * v);
                macs += (c_in * cr) as u64 * tv;
                macs += (n_l * 3) as u64 * ((cr * v) as u64 * tv + (cr * cr) as u64 * tv);
                if g.s_edgeconv {
                    params += n_l * 2 * cr * cr;
                    macs += (n_l * 2 * cr * cr * v * (g.knn_k + 1)) as u64;
                }
                let a = &config.aha;
                if a.pooling != Pooling::None {
                    let c_m = if a.per_channel { c } else { 1 };
                    let (w_in, kk) = if a.h_edgeconv { (2 * c, a.h_knn_k + 1) } else { (c, 1) };
                    params += c_m * w_in;
                    macs += (c_m * w_in * n_l * kk) as u64 + (c * n_l) as u64 * tv;
                }
            }
        }
        params += bn(c);
        if c_in != c {
            params += c_in * c + bn(c);
            macs += (c_in * c) as u64 * tv;
        }
        let t_out = hdgcn_tensor::ops::strided_len(t, stride);
        let bc = c / 4;
        let tv_out = (t_out * v) as u64;
        // Three reductions at full rate, the strided pointwise branch at output rate.
        params += 4 * c * bc + 2 * 5 * bc * bc + bn(bc) * 3 + bn(bc) * 4;
        macs += 3 * (c * bc) as u64 * tv + (c * bc) as u64 * tv_out + 2 * (5 * bc * bc) as u64 * tv_out;
        if c_in != c || stride != 1 {
            params += c_in * c + bn(c);
            macs += (c_in * c) as u64 * tv_out;
        }
        t = t_out;
        c_in = c;
    }
    params += c_in * config.num_classes + config.num_classes;
    macs += (c_in * config.num_classes) as u64;
    Ok(ComplexityReport {
        param_count: params,
        flop_count: 2 * macs,
        window: config.window,
        num_joints: v,
        num_classes: config.num_classes,
        convention: FLOP_CONVENTION.into(),
    })
}
