use super::broadcast::{aligned_strides, broadcast_shape, for_each2, reduce_to};
use crate::error::{shape_err, Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, strides, Tensor};

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::Axis { op, axis, rank })
    } else {
        Ok(())
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn permute_data<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_st = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_st: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let zero = vec![0; out_shape.len()];
    let mut out = Tensor::zeros(&out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for_each2(&out_shape, &src_st, &zero, |o, s, _| od[o] = xd[s]);
    out
}

impl<T: Real> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().clone().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        Ok(self.tape().record(value, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&in_shape).expect("reshape grad"))]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<T>> {
        let r = self.shape().len();
        let mut seen = vec![false; r];
        if perm.len() != r
            || perm
                .iter()
                .any(|&p| p >= r || std::mem::replace(&mut seen[p], true))
        {
            return Err(shape_err("permute", self.shape(), perm));
        }
        let value = permute_data(self.value(), perm);
        let mut inv = vec![0; r];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Ok(self.tape().record(value, &[self], move |g, _| {
            vec![Some(permute_data(g, &inv))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(shape_err("transpose", self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Config("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        check_axis("concat", axis, rank)?;
        for p in &parts[1..] {
            first.check_tape(p)?;
            let ok = p.shape().len() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(shape_err("concat", first.shape(), p.shape()));
            }
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut out = Tensor::zeros(&out_shape);
        {
            let od = out.data_mut();
            let mut start = 0;
            for (p, &len) in parts.iter().zip(&lens) {
                let pd = p.value().data();
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    od[dst..dst + len * inner]
                        .copy_from_slice(&pd[o * len * inner..(o + 1) * len * inner]);
                }
                start += len;
            }
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(first.tape().record(out, &refs, move |g, need| {
            let gd = g.data();
            let mut start = 0;
            let mut grads = Vec::with_capacity(shapes.len());
            for (sh, &needed) in shapes.iter().zip(need) {
                let len = sh[axis];
                if needed {
                    let mut t = Tensor::zeros(sh);
                    let td = t.data_mut();
                    for o in 0..outer {
                        let src = (o * total + start) * inner;
                        td[o * len * inner..(o + 1) * len * inner]
                            .copy_from_slice(&gd[src..src + len * inner]);
                    }
                    grads.push(Some(t));
                } else {
                    grads.push(None);
                }
                start += len;
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        check_axis("narrow", axis, shape.len())?;
        if start + len > shape[axis] {
            return Err(shape_err("narrow", &shape, &[start, len]));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &idx)
    }

    /// Picks entries `indices` along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        check_axis("index_select", axis, shape.len())?;
        let (outer, len, inner) = split_at_axis(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::Data(format!(
                "index_select: index {bad} out of range for axis of size {len}"
            )));
        }
        let k = indices.len();
        let mut out_shape = shape.clone();
        out_shape[axis] = k;
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value().data();
            let od = out.data_mut();
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let src = (o * len + i) * inner;
                    let dst = (o * k + j) * inner;
                    od[dst..dst + inner].copy_from_slice(&xd[src..src + inner]);
                }
            }
        }
        let indices = indices.to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            let gd = g.data();
            let xd = gx.data_mut();
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let src = (o * k + j) * inner;
                    let dst = (o * len + i) * inner;
                    for t in 0..inner {
                        xd[dst + t] += gd[src + t];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Per-sample neighbour gather for point features.
    ///
    /// `self` is `[N, C, P]`, `neighbors` holds `N * P * K` point indices laid
    /// out `[N, P, K]`; the result is `[N, C, P, K]` with
    /// `out[n, c, p, k] = x[n, c, neighbors[n, p, k]]`.
    pub fn gather_neighbors(&self, neighbors: &[usize], k: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 3 || neighbors.len() != shape[0] * shape[2] * k {
            return Err(shape_err("gather_neighbors", &shape, &[neighbors.len(), k]));
        }
        let (n, c, p) = (shape[0], shape[1], shape[2]);
        if let Some(&bad) = neighbors.iter().find(|&&i| i >= p) {
            return Err(TensorError::Data(format!(
                "neighbour index {bad} >= {p} points"
            )));
        }
        let mut out = Tensor::zeros(&[n, c, p, k]);
        {
            let xd = self.value().data();
            let od = out.data_mut();
            for b in 0..n {
                let nb = &neighbors[b * p * k..(b + 1) * p * k];
                for ch in 0..c {
                    let xrow = &xd[(b * c + ch) * p..(b * c + ch + 1) * p];
                    let orow = &mut od[(b * c + ch) * p * k..(b * c + ch + 1) * p * k];
                    for (o, &j) in orow.iter_mut().zip(nb) {
                        *o = xrow[j];
                    }
                }
            }
        }
        let neighbors = neighbors.to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            let gd = g.data();
            let xd = gx.data_mut();
            for b in 0..n {
                let nb = &neighbors[b * p * k..(b + 1) * p * k];
                for ch in 0..c {
                    let grow = &gd[(b * c + ch) * p * k..(b * c + ch + 1) * p * k];
                    let xrow = &mut xd[(b * c + ch) * p..(b * c + ch + 1) * p];
                    for (&gv, &j) in grow.iter().zip(nb) {
                        xrow[j] += gv;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Repeats size-1 (or missing leading) axes to reach `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<T>> {
        match broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(shape_err("broadcast_to", self.shape(), shape)),
        }
        let sa = aligned_strides(self.shape(), shape);
        let zero = vec![0; shape.len()];
        let mut out = Tensor::zeros(shape);
        {
            let xd = self.value().data();
            let od = out.data_mut();
            for_each2(shape, &sa, &zero, |o, i, _| od[o] = xd[i]);
        }
        let in_shape = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            vec![Some(reduce_to(g, &in_shape))]
        }))
    }
}
