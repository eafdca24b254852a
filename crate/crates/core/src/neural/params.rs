use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::neural::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// All trainable tensors of a model, addressable by name or id.
///
/// Ids follow registration order; [`ModelParams::iter`] walks by name.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
    grads: Vec<Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        id
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

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// `(name, id, value)` in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamId, &Tensor)> {
        self.index
            .iter()
            .map(|(name, &id)| (name.as_str(), id, &self.values[id.0]))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// Fresh zero gradients with matching shapes.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Accumulated gradients (single writer: the training step).
    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn accumulate(&mut self, g: &Gradients) {
        for (acc, t) in self.grads.iter_mut().zip(&g.tensors) {
            acc.add_assign(t);
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn take_grads(&mut self) -> Gradients {
        let tensors = self.grads.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Gradients {
            tensors: std::mem::replace(&mut self.grads, tensors),
        }
    }

    /// Overwrites values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ModelParams) {
        debug_assert_eq!(self.names, other.names);
        self.values.clone_from(&other.values);
    }

    /// Replaces the value of `name`, checking the shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: current.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ModelParams`] layout.
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

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(f));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if max_norm > 0.0 && norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}
