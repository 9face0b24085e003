use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A named trainable array plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Ordered set of named parameters. Registration order is the canonical
/// iteration and serialization order, so identical construction yields
/// identical layouts.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S> {
    params: Vec<Parameter<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<S>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::State(format!("duplicate parameter name: {name}")));
        }
        let slot = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), slot);
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<S>> {
        self.slot(name)
            .map(|s| &self.params[s])
            .ok_or_else(|| Error::State(format!("unknown parameter: {name}")))
    }

    pub fn by_slot(&self, slot: usize) -> &Parameter<S> {
        &self.params[slot]
    }

    pub fn by_slot_mut(&mut self, slot: usize) -> &mut Parameter<S> {
        &mut self.params[slot]
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.get(name)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.fill(S::zero());
        }
    }

    pub fn accumulate_grad(&mut self, slot: usize, grad: &Tensor<S>) {
        self.params[slot].grad.add_assign(grad);
    }

    /// SHA-256 of each parameter's value bytes (f32 little-endian), keyed by
    /// name. Used to verify stage-freezing contracts.
    pub fn value_hashes(&self) -> HashMap<String, String> {
        self.params
            .iter()
            .map(|p| {
                let mut h = Sha256::new();
                for v in p.value.data() {
                    h.update(v.as_f32().to_le_bytes());
                }
                (p.name.clone(), hex_string(&h.finalize()))
            })
            .collect()
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.register("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(ps.register("w", Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn registration_order_is_stable() {
        let mut ps = ParamSet::<f32>::new();
        ps.register("b", Tensor::zeros(&[1, 1])).unwrap();
        ps.register("a", Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(ps.names(), vec!["b".to_string(), "a".to_string()]);
    }
}
