use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Free,
    NonNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub constraint: Constraint,
}

impl Parameter {
    /// Clamp every entry at zero if the parameter is constrained.
    pub fn project(&mut self) {
        if self.constraint == Constraint::NonNegative {
            project_nonnegative(&mut self.value);
        }
    }
}

/// Elementwise `max(v, 0)`.
pub fn project_nonnegative(value: &mut Tensor) {
    for v in value.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a model
    /// construction bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, constraint: Constraint) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            constraint,
        });
        id
    }

    /// Glorot-style uniform initialisation: `U(-1/√fan_in, 1/√fan_in)` for free
    /// parameters and `U(0, 1/√fan_in)` for non-negative ones.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        constraint: Constraint,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let lo = match constraint {
            Constraint::Free => -bound,
            Constraint::NonNegative => 0.0,
        };
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data), constraint)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize], constraint: Constraint) -> ParamId {
        self.insert(name, Tensor::zeros(shape), constraint)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn project_all(&mut self) {
        self.params.iter_mut().for_each(Parameter::project);
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }
}

/// Gradient buffers aligned one-to-one with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Adds the gradient of `coeff · Σ θ²` over every parameter and returns
    /// the penalty value.
    pub fn add_l2(&mut self, params: &ParamStore, coeff: f64) -> f64 {
        if coeff == 0.0 {
            return 0.0;
        }
        let mut penalty = 0.0;
        for (g, (_, p)) in self.tensors.iter_mut().zip(params.iter()) {
            penalty += p.value.sum_squares();
            for (gv, &v) in g.data_mut().iter_mut().zip(p.value.data()) {
                *gv += 2.0 * coeff * v;
            }
        }
        coeff * penalty
    }
}
