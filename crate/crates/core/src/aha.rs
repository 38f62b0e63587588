//! Attention-guided hierarchy aggregation.

use hdgcn_tensor::init::fan_in_uniform;
use hdgcn_tensor::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edgeconv::edge_conv;
use crate::error::{config, Result};
use crate::graph::HierarchyDecomposition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// No attention: plain sum over the hierarchy axis.
    None,
    Sap,
    Rsap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AhaConfig {
    pub pooling: Pooling,
    pub h_edgeconv: bool,
    pub h_knn_k: usize,
    /// One score per channel and layer; otherwise one per layer.
    pub per_channel: bool,
}

impl Default for AhaConfig {
    fn default() -> Self {
        Self { pooling: Pooling::Rsap, h_edgeconv: true, h_knn_k: 2, per_channel: true }
    }
}

impl AhaConfig {
    pub fn validate(&self, n_l: usize) -> Result<()> {
        if self.pooling != Pooling::None && self.h_edgeconv && self.h_knn_k >= n_l {
            return Err(config(format!("h_knn_k = {} must be below N_L = {n_l}", self.h_knn_k)));
        }
        Ok(())
    }
}

/// RSAP weights `[N_L, V]`: `1 / (N_k + N_{k+1})` on the joints of
/// `H_k ∪ H_{k+1}`, zero elsewhere.
pub fn rsap_weights(decomp: &HierarchyDecomposition) -> Tensor<f64> {
    let (n_l, v) = (decomp.n_l(), decomp.num_joints());
    let mut w = Tensor::zeros(&[n_l, v]);
    for k in 0..n_l {
        let joints = decomp.layer_joints(k);
        let share = 1.0 / joints.len() as f64;
        for j in joints {
            w.set(&[k, j - 1], share);
        }
    }
    w
}

fn check_stack<T: Real>(stack: &Var<T>) -> Result<()> {
    if stack.shape().len() != 5 {
        return Err(config(format!("hierarchy stack must be [N, C, N_L, T, V], got {:?}", stack.shape())));
    }
    Ok(())
}

/// Max over frames, then the mean over `H_k ∪ H_{k+1}` for each layer:
/// `[N, C, N_L, T, V] -> [N, C, N_L]`.
pub fn rsap<T: Real>(s: &Session<'_, T>, stack: &Var<T>, decomp: &HierarchyDecomposition) -> Result<Var<T>> {
    check_stack(stack)?;
    let sh = stack.shape();
    if sh[2] != decomp.n_l() || sh[4] != decomp.num_joints() {
        return Err(config(format!(
            "stack {:?} does not match N_L = {} and V = {}",
            sh,
            decomp.n_l(),
            decomp.num_joints()
        )));
    }
    let peak = stack.max_axis(3, false)?;
    let w = s.input(rsap_weights(decomp).cast());
    Ok(peak.mul(&w)?.sum_axis(3, false)?)
}

/// Max over frames, then the mean over all joints.
pub fn sap<T: Real>(stack: &Var<T>) -> Result<Var<T>> {
    check_stack(stack)?;
    Ok(stack.max_axis(3, false)?.mean_axis(3, false)?)
}

/// `Σ_k M[c, k] F[c, k, t, v]`; `m` is `[N, C or 1, N_L]`.
pub fn aggregate<T: Real>(stack: &Var<T>, m: &Var<T>) -> Result<Var<T>> {
    check_stack(stack)?;
    let ms = m.shape();
    if ms.len() != 3 {
        return Err(config(format!("attention map must be [N, C, N_L], got {ms:?}")));
    }
    let m = m.reshape(&[ms[0], ms[1], ms[2], 1, 1])?;
    Ok(stack.mul(&m)?.sum_axis(2, false)?)
}

#[derive(Clone, Debug)]
pub struct Aha {
    pub config: AhaConfig,
    pub name: String,
    pub decomp: HierarchyDecomposition,
    /// `[C_m, 2C]` with H-EdgeConv, `[C_m, C]` without; absent for `None`.
    pub w: Option<ParamId>,
}

impl Aha {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        config: AhaConfig,
        decomp: &HierarchyDecomposition,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate(decomp.n_l())?;
        let c_m = if config.per_channel { channels } else { 1 };
        let w = match config.pooling {
            Pooling::None => None,
            _ => {
                let c_in = if config.h_edgeconv { 2 * channels } else { channels };
                let w = fan_in_uniform(&[c_m, c_in], c_in, rng);
                Some(store.add(format!("{name}.weight"), w, true)?)
            }
        };
        Ok(Self { config, name: name.to_string(), decomp: decomp.clone(), w })
    }

    pub fn pool<T: Real>(&self, s: &Session<'_, T>, stack: &Var<T>) -> Result<Option<Var<T>>> {
        match self.config.pooling {
            Pooling::None => Ok(None),
            Pooling::Sap => sap(stack).map(Some),
            Pooling::Rsap => rsap(s, stack, &self.decomp).map(Some),
        }
    }

    /// Sigmoid attention map `[N, C_m, N_L]` from pooled hierarchy features.
    pub fn attention<T: Real>(&self, s: &mut Session<'_, T>, pooled: &Var<T>) -> Result<Var<T>> {
        let w = self.w.ok_or_else(|| config(format!("{}: attention is disabled", self.name)))?;
        let z = if self.config.h_edgeconv {
            edge_conv(s, pooled, w, self.config.h_knn_k, &format!("{}.h_knn", self.name))?
        } else {
            let w = s.param(w);
            pooled.pointwise_conv(&w)?
        };
        Ok(z.sigmoid())
    }

    /// Weighted sum over the hierarchy axis and the attention map used.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, stack: &Var<T>) -> Result<(Var<T>, Option<Var<T>>)> {
        match self.pool(s, stack)? {
            None => Ok((stack.sum_axis(2, false)?, None)),
            Some(pooled) => {
                let m = self.attention(s, &pooled)?;
                Ok((aggregate(stack, &m)?, Some(m)))
            }
        }
    }
}
