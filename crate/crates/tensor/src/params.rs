use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Scalar, Tensor};

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Handle of one parameter, tagged with the store that issued it so that
/// parameters of several stores can share a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub frozen: bool,
}

/// Named parameter tensors plus their accumulated gradients.
///
/// A clone keeps the tag of the original, so a store and its clone must not
/// be mixed in one graph.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    tag: u64,
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
        }
    }

    /// True when `id` was issued by this store.
    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.tag
    }

    fn slot(&self, id: ParamId) -> usize {
        assert!(self.owns(id), "parameter id from another store");
        id.index
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, false)
    }

    /// A parameter that is never updated and never receives gradients.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, true)
    }

    fn push(&mut self, name: String, value: Tensor<T>, frozen: bool) -> ParamId {
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            frozen,
        });
        ParamId {
            store: self.tag,
            index: self.entries.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(|index| ParamId { store: self.tag, index })
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[self.slot(id)].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        let i = self.slot(id);
        &mut self.entries[i].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[self.slot(id)].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[self.slot(id)]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        let tag = self.tag;
        (0..self.entries.len()).map(move |index| ParamId { store: tag, index })
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[self.slot(id)].frozen
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        let i = self.slot(id);
        let e = &mut self.entries[i];
        if !e.frozen {
            e.grad.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> T {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.grad.sq_norm())
            .sum::<T>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for e in self.entries.iter_mut().filter(|e| !e.frozen) {
                e.grad.scale_assign(s);
            }
        }
        norm
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.value.numel())
            .sum()
    }
}
