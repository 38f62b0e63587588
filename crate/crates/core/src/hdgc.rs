//! HD-Graph convolution: per-layer, per-subset graph convolution on a shared
//! reduced embedding, concatenated with an S-EdgeConv branch, stacked over
//! hierarchy layers. Also the single-graph baseline it is compared against.

use hdgcn_tensor::init::fan_in_uniform;
use hdgcn_tensor::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edgeconv::edge_conv;
use crate::error::{config, Result};
use crate::graph::{to_parameters, Adjacency};
use crate::layers::Pointwise;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdgcConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub knn_k: usize,
    pub s_edgeconv: bool,
}

impl HdgcConfig {
    pub fn reduced(&self) -> usize {
        self.c_out / 4
    }

    pub fn validate(&self, num_joints: usize) -> Result<()> {
        if self.c_out == 0 || self.c_out % 4 != 0 {
            return Err(config(format!("output channels {} must be a positive multiple of 4", self.c_out)));
        }
        if self.s_edgeconv && (self.knn_k == 0 || self.knn_k >= num_joints) {
            return Err(config(format!("knn_k = {} must be in [1, {num_joints})", self.knn_k)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HdgcLayer {
    pub config: HdgcConfig,
    pub name: String,
    pub phi: Pointwise,
    /// `[C', C']` per layer and subset.
    pub theta: Vec<[ParamId; 3]>,
    /// `[V, V]` per layer and subset.
    pub adjacency: Vec<[ParamId; 3]>,
    /// `[C', 2C']` per layer, present when S-EdgeConv is on.
    pub edge: Vec<ParamId>,
}

impl HdgcLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        config: HdgcConfig,
        adj: &Adjacency,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate(adj.num_joints())?;
        let cr = config.reduced();
        let phi = Pointwise::new(store, &format!("{name}.phi"), config.c_in, cr, rng)?;
        let mut theta = Vec::new();
        let mut edge = Vec::new();
        for k in 0..adj.layers() {
            let mut row = [ParamId(0); 3];
            for (sub, slot) in row.iter_mut().enumerate() {
                let w = fan_in_uniform(&[cr, cr], cr, rng);
                *slot = store.add(format!("{name}.theta.{k}.{sub}"), w, true)?;
            }
            theta.push(row);
            if config.s_edgeconv {
                let w = fan_in_uniform(&[cr, 2 * cr], 2 * cr, rng);
                edge.push(store.add(format!("{name}.edge.{k}"), w, true)?);
            }
        }
        let adjacency = to_parameters(adj, store, &format!("{name}.adj"))?;
        Ok(Self { config, name: name.to_string(), phi, theta, adjacency, edge })
    }

    pub fn n_l(&self) -> usize {
        self.theta.len()
    }

    /// `Φ(F)`: `[N, C_in, T, V] -> [N, C', T, V]`.
    pub fn embed<T: Real>(&self, s: &mut Session<'_, T>, f_in: &Var<T>) -> Result<Var<T>> {
        self.phi.forward(s, f_in)
    }

    /// `⊕_s A_s Φ(F) Θ_s` for layer `k` from a precomputed embedding.
    pub fn subsets_from<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>, k: usize) -> Result<Var<T>> {
        if k >= self.n_l() {
            return Err(config(format!("layer {k} out of range for {} layers", self.n_l())));
        }
        let mut parts = Vec::with_capacity(3);
        for sub in 0..3 {
            let a = s.param(self.adjacency[k][sub]);
            let th = s.param(self.theta[k][sub]);
            // Row-vector features: (A X)[i] = Σ_j A[i, j] X[j]  <=>  X · Aᵀ.
            parts.push(x.matmul(&a.transpose()?)?.pointwise_conv(&th)?);
        }
        Ok(Var::concat(&parts, 1)?)
    }

    pub fn forward_subset<T: Real>(&self, s: &mut Session<'_, T>, f_in: &Var<T>, k: usize) -> Result<Var<T>> {
        let x = self.embed(s, f_in)?;
        self.subsets_from(s, &x, k)
    }

    /// S-EdgeConv on the frame-averaged embedding: `[N, C', V]`.
    pub fn s_edgeconv_from<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>, k: usize) -> Result<Var<T>> {
        let w = *self
            .edge
            .get(k)
            .ok_or_else(|| config(format!("{}: S-EdgeConv is disabled or layer {k} is out of range", self.name)))?;
        let pooled = x.mean_axis(2, false)?;
        edge_conv(s, &pooled, w, self.config.knn_k, &format!("{}.s_knn", self.name))
    }

    pub fn s_edgeconv<T: Real>(&self, s: &mut Session<'_, T>, f_in: &Var<T>, k: usize) -> Result<Var<T>> {
        let x = self.embed(s, f_in)?;
        self.s_edgeconv_from(s, &x, k)
    }

    /// Per-layer outputs stacked on a new hierarchy axis:
    /// `[N, C_in, T, V] -> [N, C_out, N_L, T, V]`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, f_in: &Var<T>) -> Result<Var<T>> {
        let x = self.embed(s, f_in)?;
        let (n, cr, t, v) = match *x.shape() {
            [n, c, t, v] => (n, c, t, v),
            _ => return Err(config(format!("HD-GC expects [N, C, T, V], got {:?}", f_in.shape()))),
        };
        let mut layers = Vec::with_capacity(self.n_l());
        for k in 0..self.n_l() {
            let sub = self.subsets_from(s, &x, k)?;
            let edge = if self.config.s_edgeconv {
                self.s_edgeconv_from(s, &x, k)?.reshape(&[n, cr, 1, v])?.broadcast_to(&[n, cr, t, v])?
            } else {
                s.input(Tensor::zeros(&[n, cr, t, v]))
            };
            layers.push(Var::concat(&[sub, edge], 1)?.reshape(&[n, 4 * cr, 1, t, v])?);
        }
        Ok(Var::concat(&layers, 2)?)
    }
}

/// `Σ_s Â_s F Θ_s` over one adjacency with full-width `Θ_s: C_in -> C_out`.
#[derive(Clone, Debug)]
pub struct ConventionalGc {
    pub adjacency: [ParamId; 3],
    pub theta: [Pointwise; 3],
}

impl ConventionalGc {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        adj: &Adjacency,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if adj.layers() != 1 {
            return Err(config("conventional convolution needs a single-layer adjacency"));
        }
        let theta = [0, 1, 2].map(|sub| Pointwise::new(store, &format!("{name}.theta.{sub}"), c_in, c_out, rng));
        let [a, b, c] = theta;
        let adjacency = to_parameters(adj, store, &format!("{name}.adj"))?[0];
        Ok(Self { adjacency, theta: [a?, b?, c?] })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, f_in: &Var<T>) -> Result<Var<T>> {
        let mut acc: Option<Var<T>> = None;
        for sub in 0..3 {
            let a = s.param(self.adjacency[sub]);
            let y = self.theta[sub].forward(s, &f_in.matmul(&a.transpose()?)?)?;
            acc = Some(match acc {
                None => y,
                Some(prev) => prev.add(&y)?,
            });
        }
        Ok(acc.expect("three subsets"))
    }
}
