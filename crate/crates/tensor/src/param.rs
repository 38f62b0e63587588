use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::ops::BatchStats;
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named tensor with an accumulated gradient.
///
/// Non-trainable parameters hold state such as batch-norm running averages;
/// they are checkpointed but never updated by the optimizer.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Config(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter::new(name, value, trainable));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Scalar count of trainable entries.
    pub fn trainable_elements(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Element-type conversion, gradients reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast(), p.trainable))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<f32>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.cast()))
            .collect()
    }

    /// Overwrites values from named tensors. Every parameter must be present
    /// with a matching shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        let by_name: HashMap<&str, &Tensor<f32>> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let t = by_name
                .get(p.name.as_str())
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }
}

/// Neighbour selections recorded once and replayed, so that repeated
/// evaluations (finite differences) see a fixed graph.
pub type SelectionCache = Rc<RefCell<HashMap<String, Vec<usize>>>>;

/// One forward pass: a fresh tape bound to a parameter store.
pub struct Session<'a, T: Real> {
    tape: Tape<T>,
    store: &'a mut ParamStore<T>,
    training: bool,
    bound: HashMap<ParamId, Var<T>>,
    rng: ChaCha8Rng,
    selections: Option<SelectionCache>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, training: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            training,
            bound: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            selections: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_selections(mut self, cache: SelectionCache) -> Self {
        self.selections = Some(cache);
        self
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn input(&self, t: Tensor<T>) -> Var<T> {
        self.tape.constant(t)
    }

    /// The parameter as a variable on this session's tape (bound once).
    pub fn param(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = self.bound.get(&id) {
            return v.clone();
        }
        let p = self.store.get(id);
        let v = if p.trainable {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound.insert(id, v.clone());
        v
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.store.get(id).value
    }

    /// Exponential running-average update of batch-norm state.
    pub fn update_running(
        &mut self,
        mean: ParamId,
        var: ParamId,
        stats: &BatchStats<T>,
        momentum: f64,
    ) {
        let m = T::of(momentum);
        for (id, src) in [(mean, &stats.mean), (var, &stats.var)] {
            let p = self.store.get_mut(id);
            for (r, &s) in p.value.data_mut().iter_mut().zip(src) {
                *r = (T::one() - m) * *r + m * s;
            }
        }
    }

    /// Returns the recorded selection for `key`, computing it on first use.
    /// Without a cache the selection is recomputed every time.
    pub fn select(&mut self, key: &str, compute: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
        match &self.selections {
            None => compute(),
            Some(cache) => {
                if let Some(v) = cache.borrow().get(key) {
                    return v.clone();
                }
                let v = compute();
                cache.borrow_mut().insert(key.to_string(), v.clone());
                v
            }
        }
    }

    /// Adds gradients of every bound trainable parameter into the store.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (&id, var) in &self.bound {
            if let Some(g) = grads.get(var) {
                let p = self.store.get_mut(id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }
}
