use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::float::Float;
use crate::graph::{Gradients, Graph, NodeId};
use crate::tensor::Tensor;
use crate::{AutogradError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// U(-bound, bound)
    Uniform(f64),
}

impl Init {
    /// He/Kaiming uniform bound for a layer followed by a rectifier.
    pub fn he(fan_in: usize) -> Self {
        Init::Uniform((6.0 / fan_in.max(1) as f64).sqrt())
    }

    /// Unit-gain uniform bound for a linear output layer.
    pub fn lecun(fan_in: usize) -> Self {
        Init::Uniform((3.0 / fan_in.max(1) as f64).sqrt())
    }
}

/// 64-bit FNV-1a, used to give each parameter its own RNG stream.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Ordered, named collection of trainable tensors.
///
/// Initial values depend only on `(seed, name, shape, init)`, so adding a
/// parameter never perturbs the initialization of the others.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stable_hash(name));
        let value = Tensor::from_fn(shape, |_| match init {
            Init::Zeros => T::zero(),
            Init::Constant(c) => T::of(c),
            Init::Uniform(b) => T::of(rng.random_range(-b..b)),
        });
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), self.values.len() - 1);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces a parameter's value; the shape must match.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(AutogradError::Shape(format!(
                "parameter {}: {:?} vs {:?}",
                self.names[id.0],
                value.shape(),
                self.values[id.0].shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Places every parameter on `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            nodes: self.values.iter().map(|v| graph.param(v.clone())).collect(),
        }
    }

    /// Places every parameter on `graph` as a constant (inference only).
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            nodes: self.values.iter().map(|v| graph.input(v.clone())).collect(),
        }
    }
}

/// Graph nodes of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradient of every parameter, `None` where the parameter did not
    /// participate in the differentiated value.
    pub fn gradients<T: Float>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.nodes.iter().map(|&n| grads.take(n)).collect()
    }
}
