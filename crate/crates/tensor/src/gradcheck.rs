//! Central finite-difference gradient checks (meant for `f64`).

use crate::error::Result;
use crate::param::{ParamStore, SelectionCache, Session};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_entries: Option<usize>,
    /// Entries whose relative error exceeds this are measured again at
    /// step/10 and step/100 and the best agreement is kept. A ReLU or max
    /// switching inside the step window corrupts only the wide stencil; a
    /// wrong analytic gradient disagrees at every step.
    pub refine_above: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
            refine_above: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// (tensor index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    fn record(&mut self, tensor: usize, elem: usize, analytic: f64, numeric: f64, floor: f64) {
        let (abs, rel) = errors(analytic, numeric, floor);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = Some((tensor, elem));
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.worst = other.worst;
        }
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.checked += other.checked;
    }
}

fn errors(analytic: f64, numeric: f64, floor: f64) -> (f64, f64) {
    let abs = (analytic - numeric).abs();
    (abs, abs / analytic.abs().max(numeric.abs()).max(floor))
}

/// Central difference at `step`, refined at smaller steps if the first
/// estimate disagrees with `analytic` by more than `opts.refine_above`.
fn numeric_grad(
    analytic: f64,
    opts: &GradCheckOptions,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let central = |h: f64, eval: &mut dyn FnMut(f64) -> Result<f64>| -> Result<f64> {
        Ok((eval(h)? - eval(-h)?) / (2.0 * h))
    };
    let mut best = central(opts.step, &mut eval)?;
    if let Some(limit) = opts.refine_above {
        for h in [opts.step / 10.0, opts.step / 100.0] {
            if errors(analytic, best, opts.floor).1 <= limit {
                break;
            }
            let n = central(h, &mut eval)?;
            if errors(analytic, n, opts.floor).1 < errors(analytic, best, opts.floor).1 {
                best = n;
            }
        }
    }
    Ok(best)
}

/// Fixed weights that turn any output into a scalar with non-trivial
/// gradients everywhere.
pub fn projection_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (1.3 * i as f64 + 0.5).sin() + 0.25)
        .collect()
}

fn project(out: &Var<f64>) -> Result<Var<f64>> {
    let w = Tensor::new(out.shape(), projection_weights(out.value().numel()))?;
    let w = out.tape().constant(w);
    Ok(out.mul(&w)?.sum_all())
}

fn indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => {
            let step = n as f64 / m as f64;
            (0..m).map(|i| (i as f64 * step) as usize).collect()
        }
        _ => (0..n).collect(),
    }
}

/// Compares the tape gradient of `f` with central differences, for every
/// input tensor. `f` may return any shape; it is projected onto fixed
/// weights before differentiation.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(project(&f(&tape, &vars)?)?.value().item())
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = project(&f(&tape, &vars)?)?;
    let grads = loss.backward()?;
    let mut report = GradCheckReport::default();
    let mut xs = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        for i in indices(xs[ti].numel(), opts.max_entries) {
            let orig = xs[ti].data()[i];
            let a = analytic.data()[i];
            let numeric = numeric_grad(a, &opts, |h| {
                xs[ti].data_mut()[i] = orig + h;
                let v = eval(&xs);
                xs[ti].data_mut()[i] = orig;
                v
            })?;
            report.record(ti, i, a, numeric, opts.floor);
        }
    }
    Ok(report)
}

/// Same check against the trainable parameters of a store. `f` runs one
/// forward pass in the given session and returns the output to differentiate.
/// All evaluations share one selection cache, so neighbour choices made in
/// the first pass stay fixed.
pub fn check_store_gradients<F>(
    store: &mut ParamStore<f64>,
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Session<'_, f64>) -> Result<Var<f64>>,
{
    let cache = SelectionCache::default();
    store.zero_grad();
    {
        let mut s = Session::new(store, true).with_selections(cache.clone());
        let out = f(&mut s)?;
        let grads = project(&out)?.backward()?;
        s.accumulate(&grads);
    }
    let analytic: Vec<Tensor<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    let trainable: Vec<bool> = store.iter().map(|p| p.trainable).collect();
    let mut report = GradCheckReport::default();
    for (pi, grad) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        let id = crate::param::ParamId(pi);
        for i in indices(grad.numel(), opts.max_entries) {
            let orig = store.get(id).value.data()[i];
            let a = grad.data()[i];
            let numeric = numeric_grad(a, &opts, |h| {
                store.get_mut(id).value.data_mut()[i] = orig + h;
                let v = {
                    let mut s = Session::new(store, true).with_selections(cache.clone());
                    f(&mut s).and_then(|out| Ok(project(&out)?.value().item()))
                };
                store.get_mut(id).value.data_mut()[i] = orig;
                v
            })?;
            report.record(pi, i, a, numeric, opts.floor);
        }
    }
    store.zero_grad();
    Ok(report)
}
