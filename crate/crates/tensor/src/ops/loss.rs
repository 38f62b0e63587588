use crate::error::{shape_err, Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Row-wise softmax of a `[N, K]` tensor, computed in log space.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(logits.shape());
    let ld = logits.data();
    let od = out.data_mut();
    for i in 0..n {
        let row = &ld[i * k..(i + 1) * k];
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        for j in 0..k {
            od[i * k + j] = (row[j] - lse).exp();
        }
    }
    out
}

impl<T: Real> Var<T> {
    /// Mean cross-entropy of `[N, K]` logits against class labels, with
    /// optional label smoothing.
    pub fn softmax_cross_entropy(&self, labels: &[usize], smoothing: f64) -> Result<Var<T>> {
        let s = self.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err("softmax_cross_entropy", s, &[labels.len()]));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(TensorError::Data(format!("label {bad} outside [0, {k})")));
        }
        let target = |i: usize, j: usize| -> f64 {
            let on = if labels[i] == j { 1.0 } else { 0.0 };
            (1.0 - smoothing) * on + smoothing / k as f64
        };
        let ld = self.value().data();
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &ld[i * k..(i + 1) * k];
            let mx = row
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
            let lse = mx
                + row
                    .iter()
                    .map(|&v| (v.as_f64() - mx).exp())
                    .sum::<f64>()
                    .ln();
            for (j, &v) in row.iter().enumerate() {
                let t = target(i, j);
                if t != 0.0 {
                    loss -= t * (v.as_f64() - lse);
                }
            }
        }
        let value = Tensor::scalar(T::of(loss / n as f64));
        let probs = softmax_rows(self.value());
        let labels = labels.to_vec();
        Ok(self.tape().record(value, &[self], move |g, _| {
            let scale = g.item() / T::of(n as f64);
            let mut gx = probs.clone();
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..k {
                    let on = if y == j { 1.0 } else { 0.0 };
                    let t = T::of((1.0 - smoothing) * on + smoothing / k as f64);
                    let v = gx.data()[i * k + j];
                    gx.data_mut()[i * k + j] = (v - t) * scale;
                }
            }
            vec![Some(gx)]
        }))
    }
}
