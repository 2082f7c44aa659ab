use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered weights of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Copies every weight onto the tape. Trainable weights are leaves with
    /// tracked gradients; frozen ones are constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound(vars)
    }
}

/// Tape handles of a bound [`ParamSet`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Per-parameter gradient accumulator in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f32>>);

impl ParamGrads {
    pub fn zeros_like<T: Real>(params: &ParamSet<T>) -> Self {
        ParamGrads(params.tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    /// Adds `scale *` the gradients of every bound parameter.
    pub fn accumulate<T: Real>(&mut self, bound: &Bound, grads: &Gradients<T>, scale: f64) {
        for (slot, &var) in self.0.iter_mut().zip(&bound.0) {
            if let Some(g) = grads.get(var) {
                for (o, &v) in slot.iter_mut().zip(g) {
                    *o += (v.f64() * scale) as f32;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Deterministic weight initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform<T: Real>(&mut self, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::new(rows, cols, data)
    }

    pub fn zeros<T: Real>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        Tensor::zeros(rows, cols)
    }

    pub fn ones<T: Real>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        Tensor::new(rows, cols, vec![T::one(); rows * cols])
    }
}
