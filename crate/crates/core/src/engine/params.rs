use std::collections::BTreeMap;

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// A named parameter: value plus trainable/frozen flag. Gradients live in the
/// tensor's grad buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameter collection with deterministic (sorted) iteration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Insert a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
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

    /// Iterate in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total element count across all parameters.
    pub fn total_len(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            let n = p.value.numel();
            p.value.set_grad(vec![0.0; n]).expect("shape matches");
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.value.clear_grad();
        }
    }

    /// Accumulate a gradient map (parameter name -> flat gradient), scaled.
    /// Names absent from the map are left untouched.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>, scale: f64) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
            p.value.accumulate_grad(g, scale)?;
        }
        Ok(())
    }
}
