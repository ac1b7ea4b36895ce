//! Named parameter storage and per-pass binding to the autodiff tape.

use std::cell::RefCell;
use std::collections::HashMap;

use lvc_autodiff::{Gradients, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    /// Scalars that receive gradient; masked kernel taps are excluded.
    learnable: Vec<usize>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, name: String, value: Tensor, learnable: usize) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.learnable.push(learnable);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.values[id.0].shape(),
            "shape change for parameter {}",
            self.names[id.0]
        );
        self.values[id.0] = value;
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.learnable.iter().sum()
    }

    /// Learnable scalars whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.learnable)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }
}

/// Allocates and initializes parameters under a hierarchical name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Child builder whose names are prefixed with `scope.`.
    pub fn scope(&mut self, scope: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            scope.to_string()
        } else {
            format!("{}.{}", self.prefix, scope)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) -> ParamId {
        let n = value.numel();
        self.store.add(self.full_name(name), value, n)
    }

    pub fn tensor_with_learnable(&mut self, name: &str, value: Tensor, learnable: usize) -> ParamId {
        self.store.add(self.full_name(name), value, learnable)
    }

    /// Uniform Glorot initialization for a kernel with the given fans.
    pub fn glorot(&mut self, shape: [usize; 4], fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_fn(shape, |_| self.rng.gen_range(-bound..bound))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Additive uniform noise in place of rounding; parameters are tracked.
    Train,
    /// Hard rounding; no tape.
    Eval,
}

/// Parameters bound for one forward pass, plus the noise source.
pub struct Ctx {
    params: Vec<Var>,
    graph: Option<Graph>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    /// Tracks every parameter on a fresh tape.
    pub fn train(store: &ParamStore, seed: u64) -> Self {
        let graph = Graph::new();
        let params = store.values().iter().map(|t| graph.leaf(t.clone())).collect();
        Ctx {
            params,
            graph: Some(graph),
            mode: Mode::Train,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Parameters as constants; nothing is recorded.
    pub fn eval(store: &ParamStore) -> Self {
        Ctx {
            params: store.values().iter().cloned().map(Var::constant).collect(),
            graph: None,
            mode: Mode::Eval,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    /// Eval-style rounding with parameters still tracked (for gradient probes).
    pub fn with_mode(store: &ParamStore, mode: Mode, seed: u64) -> Self {
        let mut ctx = Ctx::train(store, seed);
        ctx.mode = mode;
        ctx
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> &Var {
        &self.params[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// I.i.d. uniform samples in `[-0.5, 0.5)`.
    pub fn uniform_noise(&self, shape: [usize; 4]) -> Tensor {
        let mut rng = self.rng.borrow_mut();
        Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5))
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.graph.as_ref()
    }

    /// Runs the backward sweep from `loss` and returns one gradient per
    /// parameter (zeros for parameters the loss does not reach).
    pub fn backward(&self, loss: &Var) -> Vec<Tensor> {
        let graph = self
            .graph
            .as_ref()
            .expect("backward() requires a training context");
        let grads: Gradients = graph.backward(loss);
        self.params.iter().map(|p| grads.get_or_zeros(p)).collect()
    }
}
