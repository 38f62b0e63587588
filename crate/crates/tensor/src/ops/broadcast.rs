use crate::real::Real;
use crate::tensor::{numel, strides, Tensor};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r {
            a[i + a.len() - r]
        } else {
            1
        };
        let db = if i + b.len() >= r {
            b[i + b.len() - r]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast axes.
pub(crate) fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let r = out.len();
    (0..r)
        .map(|i| {
            if i + shape.len() < r {
                0
            } else {
                let j = i + shape.len() - r;
                if shape[j] == 1 {
                    0
                } else {
                    st[j]
                }
            }
        })
        .collect()
}

/// Visits every element of `out`, passing its linear index together with the
/// matching offsets into two broadcast operands.
pub(crate) fn for_each2(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let outer = numel(&out[..r - 1]);
    let mut idx = vec![0usize; r - 1];
    for o in 0..outer {
        let mut ao = 0;
        let mut bo = 0;
        for (d, &i) in idx.iter().enumerate() {
            ao += i * sa[d];
            bo += i * sb[d];
        }
        let base = o * last;
        for j in 0..last {
            f(base + j, ao + j * la, bo + j * lb);
        }
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Sums `g` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut acc = Tensor::zeros(shape);
    let sa = aligned_strides(shape, g.shape());
    let zero = vec![0; g.rank()];
    let gd = g.data();
    let ad = acc.data_mut();
    for_each2(g.shape(), &sa, &zero, |o, a, _| ad[a] += gd[o]);
    acc
}
