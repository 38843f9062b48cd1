use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

fn fresh_instance() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Present iff the parameter is trainable.
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }
}

/// Named parameter set θ of a model.
///
/// Every mutable access bumps a generation counter; together with a
/// per-instance id it fingerprints the current parameter state.
#[derive(Debug)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    instance: u64,
    generation: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            params: self.params.clone(),
            by_name: self.by_name.clone(),
            instance: fresh_instance(),
            generation: 0,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            instance: fresh_instance(),
            generation: 0,
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        requires_grad: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let id = ParamId(self.params.len());
        let grad = requires_grad.then(|| Tensor::zeros(value.shape().to_vec()));
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        self.generation += 1;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.generation += 1;
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.params[id.0].grad.as_mut()
    }

    /// Gives mutable access to a value and its gradient together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, Option<&Tensor>) {
        self.generation += 1;
        let p = &mut self.params[id.0];
        (&mut p.value, p.grad.as_ref())
    }

    pub fn set_requires_grad(&mut self, id: ParamId, requires_grad: bool) {
        let p = &mut self.params[id.0];
        match (requires_grad, p.grad.is_some()) {
            (true, false) => p.grad = Some(Tensor::zeros(p.value.shape().to_vec())),
            (false, true) => p.grad = None,
            _ => {}
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().fill(0.0);
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[Float]) {
        if let Some(g) = &mut self.params[id.0].grad {
            for (a, d) in g.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
    }

    /// Number of scalar values across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of scalar values in trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.get(id).requires_grad())
            .collect()
    }

    /// Identifies the current parameter state. Changes after any mutable access.
    pub fn fingerprint(&self) -> u64 {
        self.instance.rotate_left(32) ^ self.generation
    }

    /// Overwrites values from `(name, tensor)` pairs; every name and shape must match.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                entries.len()
            )));
        }
        for (name, value) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
            let slot = &mut self.params[id.0];
            if slot.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, checkpoint holds {:?}",
                    slot.value.shape(),
                    value.shape()
                )));
            }
            slot.value = value;
        }
        self.generation += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_mutation_and_clones() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::zeros(vec![2]), true).unwrap();
        let before = store.fingerprint();
        assert_eq!(before, store.fingerprint());
        store.value_mut(id).data_mut()[0] = 1.0;
        assert_ne!(before, store.fingerprint());
        let copy = store.clone();
        assert_ne!(copy.fingerprint(), store.fingerprint());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(vec![1]), true).unwrap();
        assert!(store.insert("w", Tensor::zeros(vec![1]), true).is_err());
    }

    #[test]
    fn grad_present_iff_trainable() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::zeros(vec![3]), true).unwrap();
        let b = store.insert("b", Tensor::zeros(vec![2, 2]), false).unwrap();
        assert_eq!(store.grad(a).unwrap().shape(), &[3]);
        assert!(store.grad(b).is_none());
        assert_eq!(store.trainable_numel(), 3);
        store.set_requires_grad(b, true);
        assert_eq!(store.grad(b).unwrap().shape(), &[2, 2]);
    }
}
