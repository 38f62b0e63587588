use crate::error::{shape_err, Result, TensorError};
use crate::real::{gemm_acc, Real};
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

/// Frames produced by a same-padded temporal window at `stride`.
pub fn strided_len(t: usize, stride: usize) -> usize {
    if t == 0 {
        0
    } else {
        (t - 1) / stride + 1
    }
}

struct TemporalGeom {
    n: usize,
    cin: usize,
    t: usize,
    v: usize,
    k: usize,
    dilation: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
}

impl TemporalGeom {
    /// Source frame for output frame `to` and tap `kk`, if inside the sequence.
    fn src(&self, to: usize, kk: usize) -> Option<usize> {
        let pos = (to * self.stride + kk * self.dilation) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < self.t).then_some(pos as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let (tv, ov) = (self.t * self.v, self.t_out * self.v);
        for ci in 0..self.cin {
            for kk in 0..self.k {
                let row = &mut col[(ci * self.k + kk) * ov..(ci * self.k + kk + 1) * ov];
                for to in 0..self.t_out {
                    let dst = &mut row[to * self.v..(to + 1) * self.v];
                    match self.src(to, kk) {
                        Some(s) => dst
                            .copy_from_slice(&x[ci * tv + s * self.v..ci * tv + (s + 1) * self.v]),
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], gx: &mut [T]) {
        let (tv, ov) = (self.t * self.v, self.t_out * self.v);
        for ci in 0..self.cin {
            for kk in 0..self.k {
                let row = &col[(ci * self.k + kk) * ov..(ci * self.k + kk + 1) * ov];
                for to in 0..self.t_out {
                    if let Some(s) = self.src(to, kk) {
                        let dst = &mut gx[ci * tv + s * self.v..ci * tv + (s + 1) * self.v];
                        for (d, &c) in dst.iter_mut().zip(&row[to * self.v..(to + 1) * self.v]) {
                            *d += c;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Var<T> {
    /// Per-location channel mixing: `x` is `[N, C_in, ...]`, `weight` is
    /// `[C_out, C_in]`, the result `[N, C_out, ...]`.
    pub fn pointwise_conv(&self, weight: &Var<T>) -> Result<Var<T>> {
        self.check_tape(weight)?;
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() < 2 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(shape_err("pointwise_conv", &xs, &ws));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[0]);
        let l = numel(&xs[2..]);
        let mut out_shape = xs.clone();
        out_shape[1] = cout;
        let mut out = Tensor::zeros(&out_shape);
        {
            let (xd, wd) = (self.value().data(), weight.value().data());
            let od = out.data_mut();
            for b in 0..n {
                gemm_acc(
                    cout,
                    cin,
                    l,
                    wd,
                    false,
                    &xd[b * cin * l..],
                    false,
                    &mut od[b * cout * l..],
                    T::zero(),
                );
            }
        }
        let xv = self.value_rc();
        let wv = weight.value_rc();
        Ok(self.tape().record(out, &[self, weight], move |g, need| {
            let gd = g.data();
            let gx = need[0].then(|| {
                let mut gx = Tensor::zeros(xv.shape());
                let gxd = gx.data_mut();
                for b in 0..n {
                    gemm_acc(
                        cin,
                        cout,
                        l,
                        wv.data(),
                        true,
                        &gd[b * cout * l..],
                        false,
                        &mut gxd[b * cin * l..],
                        T::zero(),
                    );
                }
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = Tensor::zeros(wv.shape());
                let xd = xv.data();
                for b in 0..n {
                    gemm_acc(
                        cout,
                        l,
                        cin,
                        &gd[b * cout * l..],
                        false,
                        &xd[b * cin * l..],
                        true,
                        gw.data_mut(),
                        T::one(),
                    );
                }
                gw
            });
            vec![gx, gw]
        }))
    }

    /// 1-D convolution along the frame axis, applied identically at every joint.
    ///
    /// `self` is `[N, C_in, T, V]` and `weight` `[C_out, C_in, K]`. Padding is
    /// symmetric (`dilation * (K - 1) / 2` frames of zeros each side) so the
    /// output has `ceil(T / stride)` frames.
    pub fn temporal_conv(&self, weight: &Var<T>, dilation: usize, stride: usize) -> Result<Var<T>> {
        self.check_tape(weight)?;
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 3 || ws[1] != xs[1] {
            return Err(shape_err("temporal_conv", &xs, &ws));
        }
        let k = ws[2];
        if k % 2 == 0 || dilation == 0 || !(1..=2).contains(&stride) {
            return Err(TensorError::Config(format!(
                "temporal_conv needs odd kernel, dilation >= 1, stride in {{1, 2}}; got kernel {k}, dilation {dilation}, stride {stride}"
            )));
        }
        let pad = dilation * (k - 1) / 2;
        let (n, cin, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        if dilation * (k - 1) + 1 > t + 2 * pad || t == 0 {
            return Err(TensorError::Config(format!(
                "temporal kernel span {} exceeds padded length {}",
                dilation * (k - 1) + 1,
                t + 2 * pad
            )));
        }
        let cout = ws[0];
        let geom = TemporalGeom {
            n,
            cin,
            t,
            v,
            k,
            dilation,
            stride,
            pad,
            t_out: strided_len(t, stride),
        };
        let ov = geom.t_out * v;
        let mut out = Tensor::zeros(&[n, cout, geom.t_out, v]);
        {
            let (xd, wd) = (self.value().data(), weight.value().data());
            let od = out.data_mut();
            let mut col = vec![T::zero(); cin * k * ov];
            for b in 0..n {
                geom.im2col(&xd[b * cin * t * v..], &mut col);
                gemm_acc(
                    cout,
                    cin * k,
                    ov,
                    wd,
                    false,
                    &col,
                    false,
                    &mut od[b * cout * ov..],
                    T::zero(),
                );
            }
        }
        let xv = self.value_rc();
        let wv = weight.value_rc();
        Ok(self.tape().record(out, &[self, weight], move |g, need| {
            let gd = g.data();
            let ck = geom.cin * geom.k;
            let mut col = vec![T::zero(); ck * ov];
            let mut gx = need[0].then(|| Tensor::zeros(xv.shape()));
            let mut gw = need[1].then(|| Tensor::zeros(wv.shape()));
            for b in 0..geom.n {
                let gb = &gd[b * cout * ov..];
                if let Some(gw) = gw.as_mut() {
                    geom.im2col(&xv.data()[b * geom.cin * geom.t * geom.v..], &mut col);
                    gemm_acc(cout, ov, ck, gb, false, &col, true, gw.data_mut(), T::one());
                }
                if let Some(gx) = gx.as_mut() {
                    gemm_acc(
                        ck,
                        cout,
                        ov,
                        wv.data(),
                        true,
                        gb,
                        false,
                        &mut col,
                        T::zero(),
                    );
                    let per = geom.cin * geom.t * geom.v;
                    geom.col2im(&col, &mut gx.data_mut()[b * per..(b + 1) * per]);
                }
            }
            vec![gx, gw]
        }))
    }

    /// Max pooling along frames with a same-padded window of odd `kernel`.
    pub fn max_pool_time(&self, kernel: usize, stride: usize) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err("max_pool_time", &xs, &[kernel, stride]));
        }
        if kernel % 2 == 0 || stride == 0 {
            return Err(TensorError::Config(format!(
                "max_pool_time needs odd kernel and positive stride; got {kernel}, {stride}"
            )));
        }
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let pad = (kernel - 1) / 2;
        let to = strided_len(t, stride);
        let mut out = Tensor::zeros(&[n, c, to, v]);
        let mut arg = vec![0usize; n * c * to * v];
        {
            let xd = self.value().data();
            let od = out.data_mut();
            for p in 0..n * c {
                for o in 0..to {
                    let lo = (o * stride).saturating_sub(pad);
                    let hi = (o * stride + pad).min(t - 1);
                    for j in 0..v {
                        let mut best = xd[(p * t + lo) * v + j];
                        let mut bi = lo;
                        for s in lo + 1..=hi {
                            let x = xd[(p * t + s) * v + j];
                            if x > best {
                                best = x;
                                bi = s;
                            }
                        }
                        od[(p * to + o) * v + j] = best;
                        arg[(p * to + o) * v + j] = (p * t + bi) * v + j;
                    }
                }
            }
        }
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&xs);
            let gxd = gx.data_mut();
            for (&src, &gv) in arg.iter().zip(g.data()) {
                gxd[src] += gv;
            }
            vec![Some(gx)]
        }))
    }
}
