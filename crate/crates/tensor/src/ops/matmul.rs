use super::broadcast::{aligned_strides, broadcast_shape, for_each2};
use crate::error::{shape_err, Result};
use crate::real::{gemm_acc, Real};
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

struct Plan {
    batch: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
    /// (a offset, b offset) in matrices for each output batch entry.
    pairs: Vec<(usize, usize)>,
}

fn plan(a: &[usize], b: &[usize]) -> Option<Plan> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return None;
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shape(ab, bb)?;
    let sa = aligned_strides(ab, &batch);
    let sb = aligned_strides(bb, &batch);
    let mut pairs = Vec::with_capacity(numel(&batch));
    if batch.is_empty() {
        pairs.push((0, 0));
    } else {
        for_each2(&batch, &sa, &sb, |_, i, j| pairs.push((i, j)));
    }
    Some(Plan {
        batch,
        m,
        k,
        n,
        pairs,
    })
}

impl<T: Real> Var<T> {
    /// Matrix product over the last two axes, broadcasting leading axes.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_tape(other)?;
        let p = plan(self.shape(), other.shape())
            .ok_or_else(|| shape_err("matmul", self.shape(), other.shape()))?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out_shape = p.batch.clone();
        out_shape.extend([m, n]);
        let mut out = Tensor::zeros(&out_shape);
        {
            let (ad, bd) = (self.value().data(), other.value().data());
            let od = out.data_mut();
            for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
                gemm_acc(
                    m,
                    k,
                    n,
                    &ad[ia * m * k..],
                    false,
                    &bd[ib * k * n..],
                    false,
                    &mut od[bi * m * n..],
                    T::zero(),
                );
            }
        }
        let av = self.value_rc();
        let bv = other.value_rc();
        Ok(self.tape().record(out, &[self, other], move |g, need| {
            let gd = g.data();
            let ga = need[0].then(|| {
                let mut ga = Tensor::zeros(av.shape());
                let gad = ga.data_mut();
                let bd = bv.data();
                for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
                    // dA += dC * B^T
                    gemm_acc(
                        m,
                        n,
                        k,
                        &gd[bi * m * n..],
                        false,
                        &bd[ib * k * n..],
                        true,
                        &mut gad[ia * m * k..],
                        T::one(),
                    );
                }
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = Tensor::zeros(bv.shape());
                let gbd = gb.data_mut();
                let ad = av.data();
                for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
                    // dB += A^T * dC
                    gemm_acc(
                        k,
                        m,
                        n,
                        &ad[ia * m * k..],
                        true,
                        &gd[bi * m * n..],
                        false,
                        &mut gbd[ib * k * n..],
                        T::one(),
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}
