//! Named learnable tensors with per-parameter Adam state.
//!
//! Parameter groups are distinguished by name prefix ("comm.", "cand1.",
//! "cand2.", "member."). A `Binder` loads parameters onto a tape as leaves,
//! at most once per episode, and collects their gradients afterwards.

use std::collections::BTreeMap;

use rand::Rng;

use super::{adam_step, Shape, Tape, Var};
use crate::rng::fnv64;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorData {
    pub shape: Shape,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub data: TensorData,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, shape: Shape, values: Vec<f64>) {
        assert_eq!(shape.len(), values.len(), "register: shape/value mismatch");
        let n = values.len();
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry {
                data: TensorData { shape, values },
                adam_m: vec![0.0; n],
                adam_v: vec![0.0; n],
                adam_t: 0,
            },
        );
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    /// Registers a tensor initialized uniformly in +-1/sqrt(fan_in).
    pub fn register_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: Shape,
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let values = (0..shape.len())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.register(name, shape, values);
    }

    pub fn get(&self, name: &str) -> &ParamEntry {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn entry_mut(&mut self, name: &str) -> &mut ParamEntry {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Overwrites values of an existing parameter (test harness use).
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) {
        let e = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(e.data.values.len(), values.len(), "set_values: length mismatch");
        e.data.values = values;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies one Adam step to every selected parameter that has a
    /// gradient entry. Parameters outside the selection are untouched.
    pub fn apply_adam(
        &mut self,
        selected: impl Fn(&str) -> bool,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
    ) {
        for (name, entry) in self.entries.iter_mut() {
            if !selected(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            entry.adam_t += 1;
            adam_step(
                &mut entry.data.values,
                g,
                &mut entry.adam_m,
                &mut entry.adam_v,
                entry.adam_t,
                lr,
            );
        }
    }

    /// Order- and content-sensitive digest of all values and Adam state.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, e) in &self.entries {
            bytes.extend_from_slice(name.as_bytes());
            for v in e
                .data
                .values
                .iter()
                .chain(&e.adam_m)
                .chain(&e.adam_v)
            {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&e.adam_t.to_le_bytes());
        }
        fnv64(&bytes)
    }
}

/// Per-episode bridge between a `ParamStore` and a `Tape`.
pub struct Binder<'a> {
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            bound: BTreeMap::new(),
        }
    }

    /// Leaf var holding the parameter's current values; cached so each
    /// parameter appears on the tape once and its gradient accumulates
    /// across all uses.
    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let e = self.store.get(name);
        let v = tape.leaf(e.data.shape, e.data.values.clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    /// Gradients of all bound parameters after a backward pass. Bound
    /// parameters the root does not reach get zero gradients.
    pub fn collect_grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.values(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.register_uniform("w", Shape::Matrix(8, 16), 16, &mut rng);
        let bound = 1.0 / 4.0;
        for &v in &store.get("w").data.values {
            assert!(v.abs() < bound);
        }
    }

    #[test]
    fn apply_adam_only_touches_selection() {
        let mut store = ParamStore::new();
        store.register("cand1.w", Shape::Vector(2), vec![1.0, 2.0]);
        store.register("cand2.w", Shape::Vector(2), vec![3.0, 4.0]);
        let mut grads = BTreeMap::new();
        grads.insert("cand1.w".to_string(), vec![0.5, -0.5]);
        grads.insert("cand2.w".to_string(), vec![0.5, -0.5]);
        store.apply_adam(|n| n.starts_with("cand1."), &grads, 0.001);
        assert_ne!(store.get("cand1.w").data.values, vec![1.0, 2.0]);
        assert_eq!(store.get("cand2.w").data.values, vec![3.0, 4.0]);
        assert_eq!(store.get("cand2.w").adam_t, 0);
    }

    #[test]
    fn binder_caches_and_accumulates_across_uses() {
        let mut store = ParamStore::new();
        store.register("w", Shape::Vector(2), vec![2.0, 3.0]);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        let a = binder.get(&mut tape, "w");
        let b = binder.get(&mut tape, "w");
        assert_eq!(a, b);
        // loss = sum(w * w): gradient 2w accumulated through both uses
        let p = tape.mul(a, b);
        let s = tape.sum(p);
        tape.backward(s);
        let grads = binder.collect_grads(&tape);
        assert_eq!(grads["w"], vec![4.0, 6.0]);
    }
}
