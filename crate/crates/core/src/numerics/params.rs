use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Fault, Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered registry of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("parameter"));
        }
        self.lookup.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {}: {:?} vs {:?}",
                self.names[id.0],
                value.shape(),
                self.values[id.0].shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count over all tensors.
    pub fn element_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zeroes every parameter whose name starts with `prefix`; returns how many matched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut hits = 0;
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                hits += 1;
            }
        }
        hits
    }
}

/// Deterministic RNG for one parameter: depends only on the model seed and
/// the parameter's name, not on construction order.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

/// One forward/backward pass: a fresh graph plus lazily bound parameters.
pub struct Session<'p> {
    pub graph: Graph,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { graph: Graph::new(), store, bound: vec![None; store.len()] }
    }

    pub fn with_fault(store: &'p ParamStore, fault: Fault) -> Self {
        Self { graph: Graph::with_fault(fault), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Graph handle for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.variable(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.graph.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.graph.backward(loss)
    }

    /// Gradients per parameter (indexed like the store); unused parameters get `None`.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.take(v))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Weight initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform with variance suited to the following activation.
    Uniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init: Init,
        seed: u64,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument(format!("{name}: zero-width layer")));
        }
        let wname = format!("{name}.weight");
        let weight = match init {
            Init::Zeros => Tensor::zeros(&[in_dim, out_dim]),
            Init::Uniform => {
                let gain = if activation == Activation::Relu { 6.0 } else { 3.0 };
                let bound = (gain / in_dim as f64).sqrt();
                let mut rng = param_rng(seed, &wname);
                Tensor::from_fn(&[in_dim, out_dim], |_| rng.random_range(-bound..bound))
            }
        };
        let weight = store.add(wname, weight)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.linear(x, w, Some(b))
    }
}

/// Layer widths with the activation that follows each one.
pub type LayerSpec = (usize, Activation);

/// Stack of linear layers shared across all leading (set) positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::with_init(store, name, in_dim, specs, seed, Init::Uniform)
    }

    /// As [`Mlp::new`], with `last_init` applied to the final layer's weights.
    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        specs: &[LayerSpec],
        seed: u64,
        last_init: Init,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument(format!("{name}: empty layer spec")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = in_dim;
        for (i, &(out, act)) in specs.iter().enumerate() {
            let init = if i + 1 == specs.len() { last_init } else { Init::Uniform };
            layers.push((Linear::new(store, &format!("{name}.{i}"), width, out, act, init, seed)?, act));
            width = out;
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.0.out_dim).unwrap_or(0)
    }

    pub fn layers(&self) -> &[(Linear, Activation)] {
        &self.layers
    }

    /// Every parameter id, in layer order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|(l, _)| [l.weight, l.bias]).collect()
    }

    pub fn last_layer(&self) -> &Linear {
        &self.layers.last().expect("non-empty").0
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        for (layer, act) in &self.layers {
            h = layer.forward(s, h)?;
            h = match act {
                Activation::Relu => s.graph.relu(h),
                Activation::Sigmoid => s.graph.sigmoid(h),
                Activation::None => h,
            };
        }
        Ok(h)
    }
}
