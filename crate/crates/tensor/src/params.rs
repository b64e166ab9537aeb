// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

/// Named learnable tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Argument(format!("parameter {name} defined twice")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Binds parameters to a tape, each at most once, so their gradients can be
/// collected after the backward pass.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
}

impl Binder {
    pub fn new<T: Real>(store: &ParamStore<T>) -> Self {
        Self {
            vars: vec![None; store.len()],
        }
    }

    pub fn var<T: Real>(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, id: usize) -> Var {
        *self.vars[id].get_or_insert_with(|| tape.leaf(store.get(id).clone()))
    }

    /// Per-parameter gradients; parameters never used get `None`.
    pub fn collect<T: Real>(&self, grads: &mut Grads<T>) -> Vec<Option<Vec<T>>> {
        self.vars.iter().map(|v| v.and_then(|v| grads.take(v))).collect()
    }
}

/// Adds `src` into `dst` elementwise, allocating where `dst` is empty.
pub fn accumulate<T: Real>(dst: &mut [Option<Vec<T>>], src: Vec<Option<Vec<T>>>) {
    for (d, s) in dst.iter_mut().zip(src) {
        match (d.as_mut(), s) {
            (Some(d), Some(s)) => d.iter_mut().zip(s).for_each(|(a, b)| *a += b),
            (None, Some(s)) => *d = Some(s),
            _ => {}
        }
    }
}
