use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
    pub(crate) first_moment: Tensor,
    pub(crate) second_moment: Tensor,
}

/// Named trainable tensors, their gradient slots and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) {
        let zeros = Tensor::new(value.shape().to_vec(), vec![0.0; value.len()]).expect("shape already validated");
        self.entries.insert(
            name.into(),
            ParamEntry {
                grad: zeros.clone(),
                first_moment: zeros.clone(),
                second_moment: zeros,
                value,
                frozen,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.frozen = frozen)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn is_frozen(&self, name: &str) -> Result<bool> {
        Ok(self.entry(name)?.frozen)
    }

    /// Frozen entries ignore incoming gradients.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if !entry.grad.same_shape(grad) {
            return Err(Error::Shape {
                op: "accumulate_grad",
                lhs: entry.grad.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if !entry.frozen {
            entry.grad.add_assign(grad);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all entries, frozen ones included.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries.values().filter(|e| !e.frozen).map(|e| e.value.len()).sum()
    }

    pub fn grad_norm(&self, name: &str) -> Result<f64> {
        Ok(self.grad(name)?.norm())
    }

    /// SHA-256 over names, shapes and value bits, hex encoded.
    pub fn checksum<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> String {
        let mut hasher = Sha256::new();
        for name in names {
            if let Some(e) = self.entries.get(name) {
                hasher.update(name.as_bytes());
                for d in e.value.shape() {
                    hasher.update((*d as u64).to_le_bytes());
                }
                for v in e.value.data() {
                    hasher.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn checksum_all(&self) -> String {
        let names: Vec<String> = self.entries.keys().cloned().collect();
        self.checksum(names.iter().map(String::as_str))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_entries_ignore_gradients() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::filled(2, 2, 1.0), true);
        store.accumulate_grad("a", &Tensor::filled(2, 2, 3.0)).unwrap();
        assert_eq!(store.grad("a").unwrap().sum(), 0.0);
    }

    #[test]
    fn gradient_shape_must_match() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::filled(2, 2, 1.0), false);
        assert!(store.accumulate_grad("a", &Tensor::zeros(1, 4)).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::filled(1, 3, 1.0), false);
        let before = store.checksum_all();
        store.value_mut("a").unwrap().data_mut()[1] = 2.0;
        assert_ne!(before, store.checksum_all());
    }
}
