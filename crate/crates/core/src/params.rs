use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`]. Ids are dense indices in insertion order,
/// so iteration and optimizer updates are deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Owns every trainable tensor of a model. Tapes reference parameters by id,
/// backward passes accumulate into the grad buffers held here, and the
/// optimizer walks ids in insertion order.
///
/// Frozen modules (the instruction teacher) live in their own store that is
/// simply never handed to an optimizer.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Register a tensor under a unique name. The stored copy always carries
    /// a grad buffer.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateTensorName { name });
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id.0);
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
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

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Copy values (not grads) from `src` by name. Every name in `src` must
    /// exist here with the same shape; extra names here are left untouched.
    pub fn load_from(&mut self, src: &ParamStore<T>) -> Result<()> {
        for (name, tensor) in src.names.iter().zip(&src.tensors) {
            let id = self.lookup(name).ok_or_else(|| Error::MissingTensor {
                name: name.clone(),
            })?;
            let dst = self.get_mut(id);
            if dst.shape() != tensor.shape() {
                return Err(Error::Contract {
                    op: "load_from",
                    detail: format!(
                        "shape mismatch for '{}': {:?} vs {:?}",
                        name,
                        dst.shape(),
                        tensor.shape()
                    ),
                });
            }
            dst.data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Cast every parameter into another scalar type, preserving names and
    /// order. Used by the gradient-check suite to rebuild an f32 model in f64.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, tensor) in self.entries() {
            out.add(name, tensor.cast::<U>())
                .expect("names unique by construction");
        }
        out
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}
