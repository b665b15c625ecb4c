//! Named parameter storage. A [`ParamStore`] owns the master copies of all
//! learnable tensors; each forward pass binds them onto a fresh tape (leaves
//! for trainable entries, constants for frozen ones). Batch-norm running
//! statistics live in a parallel [`BnStates`] collection because they are
//! updated by forward passes, not by the optimizer.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::BnState;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnId(pub usize);

#[derive(Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name: {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.values.push(value);
        self.trainable.push(trainable);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.dims() != self.values[id.0].dims() {
            return Err(Error::Config(format!(
                "parameter {} has dims {:?}, refusing {:?}",
                self.names[id.0],
                self.values[id.0].dims(),
                value.dims()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries in insertion order; the order is part of the checkpoint and
    /// determinism contracts.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.trainable)
            .map(|((n, v), &t)| (n.as_str(), v, t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count over trainable tensors.
    pub fn trainable_scalar_count(&self) -> usize {
        self.values
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(v, _)| v.len())
            .sum()
    }

    pub fn bind(&self, tape: &Tape) -> Bound {
        let vars = self
            .values
            .iter()
            .zip(&self.trainable)
            .map(|(v, &t)| if t { tape.leaf(v.clone()) } else { tape.constant(v.clone()) })
            .collect();
        Bound { vars }
    }

    /// Binds every parameter as a constant; forwards built on this track no
    /// gradients. The right choice for evaluation-only passes.
    pub fn bind_frozen(&self, tape: &Tape) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }
}

/// Parameter tensors materialized on one tape, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Wraps already-materialized vars, one per parameter in registration
    /// order. Lets a gradient check drive a model from its own leaves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct BnStates {
    names: Vec<String>,
    states: Vec<BnState>,
    index: HashMap<String, usize>,
}

impl BnStates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, d: usize) -> Result<BnId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate batch-norm state name: {name}")));
        }
        let id = self.states.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.states.push(BnState::new(d));
        Ok(BnId(id))
    }

    pub fn id(&self, name: &str) -> Option<BnId> {
        self.index.get(name).copied().map(BnId)
    }

    pub fn name(&self, id: BnId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: BnId) -> &BnState {
        &self.states[id.0]
    }

    pub fn get_mut(&mut self, id: BnId) -> &mut BnState {
        &mut self.states[id.0]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BnState)> {
        self.names.iter().zip(&self.states).map(|(n, s)| (n.as_str(), s))
    }
}

/// Uniform init in +-sqrt(1/fan_in).
pub fn uniform_fan_in(rng: &mut impl Rng, dims: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(dims, data).expect("uniform init is finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;
    use crate::rng::stream;

    #[test]
    fn store_rejects_duplicates_and_preserves_order() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2]), true).unwrap();
        store.add("b", Tensor::zeros(&[3]), false).unwrap();
        assert!(store.add("a", Tensor::zeros(&[2]), true).is_err());
        let names: Vec<&str> = store.iter().map(|(n, _, _)| n).collect();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(store.trainable_scalar_count(), 2);
    }

    #[test]
    fn set_value_enforces_dims() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2, 2]), true).unwrap();
        assert!(store.set_value(id, Tensor::zeros(&[4])).is_err());
        assert!(store.set_value(id, Tensor::full(&[2, 2], 1.0)).is_ok());
        assert_eq!(store.value(id), &Tensor::full(&[2, 2], 1.0));
    }

    #[test]
    fn bind_tracks_only_trainable_entries() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[2], 1.0), true).unwrap();
        let frozen = store.add("f", Tensor::full(&[2], 1.0), false).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let loss = sum(
            &tape,
            crate::ops::add(&tape, bound.var(w), bound.var(frozen)).unwrap(),
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(bound.var(w)).is_some());
        assert!(grads.get(bound.var(frozen)).is_none());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = stream(1, "init-test");
        let t = uniform_fan_in(&mut rng, &[8, 8], 64);
        let bound = (1.0f64 / 64.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound));
        // Not all identical (degenerate rng would produce a constant).
        assert!(t.data().iter().any(|&v| v != t.data()[0]));
    }

    #[test]
    fn bn_states_round_trip() {
        let mut states = BnStates::new();
        let id = states.add("bn0", 3).unwrap();
        assert!(states.add("bn0", 3).is_err());
        states.get_mut(id).mean = Tensor::full(&[3], 0.5);
        assert_eq!(states.get(id).mean, Tensor::full(&[3], 0.5));
        assert_eq!(states.id("bn0"), Some(id));
    }
}
