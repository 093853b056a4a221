//! Named parameter registry.
//!
//! Layers register their weights here under stable dotted names
//! ("encoder.conv.0.weight"). The registry preserves insertion order so
//! checkpoints and optimizer traversals are reproducible.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{GradMap, Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct ModelParams<E: Scalar = f32> {
    entries: IndexMap<String, Tensor<E>>,
}

impl<E: Scalar> ModelParams<E> {
    pub fn new() -> Self {
        ModelParams { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Copy gradients from a backward pass into the tensors' `grad` fields.
    pub fn absorb_grads(&mut self, grads: &GradMap<E>) {
        for (name, t) in self.entries.iter_mut() {
            t.set_grad(grads.get(name).map(<[E]>::to_vec));
        }
    }

    pub fn cast<F: Scalar>(&self) -> ModelParams<F> {
        ModelParams {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut p = ModelParams::<f32>::new();
        p.insert("b", Tensor::zeros(&[2])).unwrap();
        p.insert("a", Tensor::zeros(&[2])).unwrap();
        let names: Vec<_> = p.names().collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::<f32>::new();
        p.insert("w", Tensor::zeros(&[1])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[1])).is_err());
    }
}
