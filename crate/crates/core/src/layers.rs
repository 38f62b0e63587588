//! Parameterized building blocks shared by the spatial and temporal modules.

use hdgcn_tensor::init::fan_in_uniform;
use hdgcn_tensor::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true)?,
            mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?,
            var: store.add(format!("{name}.running_var"), Tensor::ones(&[c]), false)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        if s.training() {
            let (y, stats) = x.batch_norm(&g, &b, None, BN_EPS)?;
            if let Some(stats) = stats {
                s.update_running(self.mean, self.var, &stats, BN_MOMENTUM);
            }
            Ok(y)
        } else {
            let rm = s.value(self.mean).clone();
            let rv = s.value(self.var).clone();
            Ok(x.batch_norm(&g, &b, Some((&rm, &rv)), BN_EPS)?.0)
        }
    }
}

/// A batch norm that can be switched off.
#[derive(Clone, Debug)]
pub struct Norm(pub Option<BatchNorm>);

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize, enabled: bool) -> Result<Self> {
        Ok(Norm(if enabled { Some(BatchNorm::new(store, name, c)?) } else { None }))
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match &self.0 {
            Some(bn) => bn.forward(s, x),
            None => Ok(x.clone()),
        }
    }
}

/// `[C_out, C_in]` channel mixing without bias.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub w: ParamId,
}

impl Pointwise {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = fan_in_uniform(&[c_out, c_in], c_in, rng);
        Ok(Self { w: store.add(format!("{name}.weight"), w, true)? })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = s.param(self.w);
        Ok(x.pointwise_conv(&w)?)
    }
}

/// Affine map `[N, C_in] -> [N, C_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = fan_in_uniform(&[c_out, c_in], c_in, rng);
        Ok(Self {
            w: store.add(format!("{name}.weight"), w, true)?,
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = s.param(self.w);
        let b = s.param(self.b);
        Ok(x.matmul(&w.transpose()?)?.add(&b)?)
    }
}

/// `[C_out, C_in, K]` convolution along frames.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    pub w: ParamId,
    pub dilation: usize,
    pub stride: usize,
}

impl TemporalConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = fan_in_uniform(&[c_out, c_in, kernel], c_in * kernel, rng);
        Ok(Self { w: store.add(format!("{name}.weight"), w, true)?, dilation, stride })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = s.param(self.w);
        Ok(x.temporal_conv(&w, self.dilation, self.stride)?)
    }
}
