//! Named parameter storage, decoupled from any single computation graph.
//!
//! A [`ParamStore`] owns the learnable tensors between forward passes. Each
//! pass binds them into a fresh [`Graph`] with [`ParamStore::bind`], and
//! gradients are read back in insertion order with
//! [`ParamStore::collect_grads`], so the optimizer state stays aligned.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert_with(name, value, true)
    }

    pub fn insert_with(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].value)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters across all entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn trainable_entries(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter().filter(|e| e.trainable)
    }

    /// Pushes every parameter into `graph` (trainable entries as leaves,
    /// frozen ones as constants) and returns the name-to-var binding.
    pub fn bind(&self, graph: &mut Graph<T>) -> Result<GraphParams> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let v = if e.trainable {
                graph.leaf(e.value.clone())?
            } else {
                graph.constant(e.value.clone())?
            };
            vars.insert(e.name.clone(), v);
        }
        Ok(GraphParams { vars })
    }

    /// Gradients of every trainable entry in insertion order. Entries the
    /// loss never touched come back as zeros.
    pub fn collect_grads(&self, graph: &Graph<T>, bound: &GraphParams) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::new();
        for e in self.trainable_entries() {
            let v = bound.var(&e.name)?;
            match graph.grad(v) {
                Some(g) => out.push(g.clone()),
                None => out.push(Tensor::zeros(e.value.shape())),
            }
        }
        Ok(out)
    }
}

/// Name-to-[`Var`] binding for one graph, produced by [`ParamStore::bind`].
pub struct GraphParams {
    vars: HashMap<String, Var>,
}

impl GraphParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }
}
