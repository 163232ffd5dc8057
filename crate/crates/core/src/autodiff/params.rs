use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::real::Real;

use super::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Excludes parameters whose name starts with `prefix` from gradient computation.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for name in self.tensors.keys() {
            if name.starts_with(prefix) {
                self.frozen.insert(name.clone());
            }
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    /// Moves every tensor whose name starts with `prefix` into a new store.
    pub fn split_prefix(&mut self, prefix: &str) -> ParamStore<T> {
        let names: Vec<String> = self.tensors.keys().filter(|n| n.starts_with(prefix)).cloned().collect();
        let mut out = ParamStore::new();
        for n in names {
            let t = self.tensors.remove(&n).expect("listed name");
            if self.frozen.remove(&n) {
                out.frozen.insert(n.clone());
            }
            out.tensors.insert(n, t);
        }
        out
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        self.frozen.extend(other.frozen);
        self.tensors.extend(other.tensors);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Uniform Glorot initialization for a `fan_in × fan_out` matrix.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        self.insert(name, Tensor::from_vec(fan_in, fan_out, data));
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.insert(name, Tensor::from_vec(rows, cols, vec![T::from_f64(value); rows * cols]));
    }

    /// Global L2 norm over all tensors.
    pub fn global_norm(tensors: &BTreeMap<String, Tensor<T>>) -> T {
        tensors.values().map(|t| t.sum_sq()).sum::<T>().sqrt()
    }
}
