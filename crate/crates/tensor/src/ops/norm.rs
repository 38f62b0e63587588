use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

/// Per-channel statistics of one training batch, for running-average updates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

impl<T: Real> Var<T> {
    /// Batch normalization over every axis except axis 1.
    ///
    /// With `running = None` the batch statistics are used (training) and
    /// returned; otherwise the supplied running mean and variance are used.
    pub fn batch_norm(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        eps: f64,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        self.check_tape(gamma)?;
        self.check_tape(beta)?;
        let xs = self.shape().to_vec();
        if xs.len() < 2 {
            return Err(shape_err("batch_norm", &xs, gamma.shape()));
        }
        let (n, c) = (xs[0], xs[1]);
        let l = numel(&xs[2..]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_err("batch_norm", &xs, gamma.shape()));
        }
        if let Some((rm, rv)) = running {
            if rm.shape() != [c] || rv.shape() != [c] {
                return Err(shape_err("batch_norm", &xs, rm.shape()));
            }
        }
        let m = (n * l) as f64;
        let xd = self.value().data();
        let mut mean = vec![0.0f64; c];
        let mut inv_std = vec![0.0f64; c];
        let mut stats = None;
        match running {
            Some((rm, rv)) => {
                for ch in 0..c {
                    mean[ch] = rm.data()[ch].as_f64();
                    inv_std[ch] = 1.0 / (rv.data()[ch].as_f64() + eps).sqrt();
                }
            }
            None => {
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * l..(b * c + ch + 1) * l] {
                            s += v.as_f64();
                        }
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * l..(b * c + ch + 1) * l] {
                            let d = v.as_f64() - mu;
                            q += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                    inv_std[ch] = 1.0 / (var[ch] + eps).sqrt();
                }
                let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                stats = Some(BatchStats {
                    mean: mean.iter().map(|&v| T::of(v)).collect(),
                    var: var.iter().map(|&v| T::of(v * unbiased)).collect(),
                });
            }
        }
        let training = running.is_none();
        let mut xhat = Tensor::zeros(&xs);
        let mut out = Tensor::zeros(&xs);
        {
            let gd = gamma.value().data();
            let bd = beta.value().data();
            let hd = xhat.data_mut();
            let od = out.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let (mu, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
                    for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                        let h = (xd[i] - mu) * is;
                        hd[i] = h;
                        od[i] = gd[ch] * h + bd[ch];
                    }
                }
            }
        }
        let gv = gamma.value_rc();
        let var = self
            .tape()
            .record(out, &[self, gamma, beta], move |g, need| {
                let gd = g.data();
                let hd = xhat.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dyh = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                            sum_dy[ch] += gd[i];
                            sum_dyh[ch] += gd[i] * hd[i];
                        }
                    }
                }
                let gx = need[0].then(|| {
                    let mut gx = Tensor::zeros(&xs);
                    let gxd = gx.data_mut();
                    let gam = gv.data();
                    let inv_m = T::of(1.0 / m);
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * T::of(inv_std[ch]);
                            let (mdy, mdyh) = (sum_dy[ch] * inv_m, sum_dyh[ch] * inv_m);
                            for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                                gxd[i] = if training {
                                    k * (gd[i] - mdy - hd[i] * mdyh)
                                } else {
                                    k * gd[i]
                                };
                            }
                        }
                    }
                    gx
                });
                let ggamma = need[1].then(|| Tensor::new(&[c], sum_dyh.clone()).expect("shape"));
                let gbeta = need[2].then(|| Tensor::new(&[c], sum_dy.clone()).expect("shape"));
                vec![gx, ggamma, gbeta]
            });
        Ok((var, stats))
    }
}
