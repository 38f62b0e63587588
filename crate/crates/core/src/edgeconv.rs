//! EdgeConv over a per-sample k-nearest-neighbour graph in feature space.

use hdgcn_tensor::{ParamId, Real, Session, Var};

use crate::error::{config, Result};

/// Neighbour lists `[N, P, k + 1]` for points `[N, C, P]`: the point itself
/// first, then its `k` nearest other points by Euclidean distance, ties to
/// the lower index.
pub fn knn<T: Real>(x: &[T], n: usize, c: usize, p: usize, k: usize) -> Result<Vec<usize>> {
    if k >= p {
        return Err(config(format!("k-NN with k = {k} needs more than {p} points")));
    }
    let mut out = Vec::with_capacity(n * p * (k + 1));
    let mut dist = Vec::with_capacity(p);
    for b in 0..n {
        let feat = |ch: usize, i: usize| x[(b * c + ch) * p + i].as_f64();
        for i in 0..p {
            dist.clear();
            for j in (0..p).filter(|&j| j != i) {
                let d: f64 = (0..c).map(|ch| (feat(ch, i) - feat(ch, j)).powi(2)).sum();
                dist.push((d, j));
            }
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.push(i);
            out.extend(dist.iter().take(k).map(|&(_, j)| j));
        }
    }
    Ok(out)
}

/// `max_j W [x_i ; x_j - x_i]` over the neighbours `j` of each point.
///
/// `x` is `[N, C, P]`, `w` is `[C_out, 2C]`, the result `[N, C_out, P]`.
/// Neighbour selection is read from values only and recorded under `key`.
pub fn edge_conv<T: Real>(s: &mut Session<'_, T>, x: &Var<T>, w: ParamId, k: usize, key: &str) -> Result<Var<T>> {
    let (n, c, p) = match *x.shape() {
        [n, c, p] => (n, c, p),
        _ => return Err(config(format!("edge_conv expects [N, C, P], got {:?}", x.shape()))),
    };
    let value = x.value_rc();
    let mut failure = None;
    let nb = s.select(key, || match knn(value.data(), n, c, p, k) {
        Ok(v) => v,
        Err(e) => {
            failure = Some(e);
            Vec::new()
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let kk = k + 1;
    let gathered = x.gather_neighbors(&nb, kk)?;
    let center = x.reshape(&[n, c, p, 1])?.broadcast_to(&[n, c, p, kk])?;
    let diff = gathered.sub(&center)?;
    let edges = Var::concat(&[center, diff], 1)?;
    let w = s.param(w);
    Ok(edges.pointwise_conv(&w)?.max_axis(3, false)?)
}
