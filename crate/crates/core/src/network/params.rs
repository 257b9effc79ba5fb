use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Backend, Tensor};

/// Ordered, named collection of tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        assert!(self.index(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, t));
        self.entries.len() - 1
    }

    pub fn normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> usize {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Puts every tensor on a backend, in store order.
    pub fn attach<B: Backend>(&self, b: &mut B) -> Vec<B::V> {
        self.entries
            .iter()
            .map(|(_, t)| b.input(t.clone()))
            .collect()
    }
}

/// Backend handles resolved by parameter name.
pub(crate) struct Bound<'a, B: Backend> {
    pub store: &'a ParamStore,
    pub vars: &'a [B::V],
}

impl<B: Backend> Bound<'_, B> {
    pub fn var(&self, name: &str) -> B::V {
        let i = self
            .store
            .index(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i].clone()
    }
}
