//! Named parameter storage and deterministic initialization.

use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the value of `name`, keeping extents fixed.
    pub fn assign(&mut self, name: &str, t: Tensor) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::checkpoint(name, "unknown parameter"))?;
        if self.tensors[id.0].dims() != t.dims() {
            return Err(Error::checkpoint(
                name,
                format!("extents {} do not match model {}", t.dims(), self.tensors[id.0].dims()),
            ));
        }
        self.tensors[id.0] = t;
        Ok(())
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone())).collect())
    }

    /// Gradients of every bound parameter after [`Graph::backward`].
    pub fn collect_grads(&self, g: &Graph, bound: &Bound) -> Vec<Vec<f64>> {
        bound
            .0
            .iter()
            .map(|v| {
                g.grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(*v).numel()])
            })
            .collect()
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }
}

/// Graph handles of a [`ParamStore`] bound into one forward pass.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded weight initializer: fan-in scaled normal for weights, zeros for biases.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Kaiming-normal weight with std `sqrt(2 / fan_in)`.
    pub fn kaiming(&mut self, dims: impl Into<Dims>) -> Tensor {
        let d = dims.into();
        let fan_in = (d.c * d.h * d.w).max(1) as f64;
        Tensor::normal(d, (2.0 / fan_in).sqrt(), &mut self.rng)
    }

    /// Normal weight with an explicit std.
    pub fn normal(&mut self, dims: impl Into<Dims>, std: f64) -> Tensor {
        Tensor::normal(dims, std, &mut self.rng)
    }
}
