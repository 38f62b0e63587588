use super::shape::split_at_axis;
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

impl<T: Real> Var<T> {
    /// Reduces along `axis`. Sums accumulate in index order starting from
    /// zero; max routes its gradient to the first maximal index.
    pub fn reduce(&self, axis: usize, mode: ReduceMode, keepdim: bool) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "reduce",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        if len == 0 {
            return Err(TensorError::EmptyAxis { op: "reduce", axis });
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let xd = self.value().data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax: Vec<usize> = Vec::new();
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if mode == ReduceMode::Mean {
                    let inv = T::one() / T::of(len as f64);
                    out.iter_mut().for_each(|v| *v = *v * inv);
                }
            }
            ReduceMode::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = xd[o * len * inner + i];
                        let mut bi = 0;
                        for l in 1..len {
                            let v = xd[(o * len + l) * inner + i];
                            if v > best {
                                best = v;
                                bi = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = bi;
                    }
                }
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.tape().record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = Tensor::zeros(&shape);
            let xd = gx.data_mut();
            match mode {
                ReduceMode::Sum | ReduceMode::Mean => {
                    let s = if mode == ReduceMode::Mean {
                        T::one() / T::of(len as f64)
                    } else {
                        T::one()
                    };
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                xd[(o * len + l) * inner + i] = gd[o * inner + i] * s;
                            }
                        }
                    }
                }
                ReduceMode::Max => {
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i];
                            xd[(o * len + l) * inner + i] += gd[o * inner + i];
                        }
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<T>> {
        self.reduce(axis, ReduceMode::Sum, keepdim)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<T>> {
        self.reduce(axis, ReduceMode::Mean, keepdim)
    }

    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Var<T>> {
        self.reduce(axis, ReduceMode::Max, keepdim)
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum_all(&self) -> Var<T> {
        let n = self.value().numel();
        self.reshape(&[n])
            .and_then(|v| v.reduce(0, ReduceMode::Sum, false))
            .expect("flatten and sum")
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }
}
