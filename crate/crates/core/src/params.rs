//! Named, insertion-ordered parameter storage with gradient and Adam moment slots.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored here too but
    /// are never touched by the optimizer.
    pub trainable: bool,
    pub(crate) has_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate parameter `{name}`"
            )));
        }
        let shape = value.shape().to_vec();
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            trainable,
            has_grad: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.id(name)?;
        Some(&mut self.entries[id.0].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| &self.entries[id.0].grad)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<T>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
            e.has_grad = false;
        }
    }

    /// Overwrite the gradient slot of `id`.
    pub fn set_grad(&mut self, id: ParamId, grad: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if grad.shape() != e.value.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for `{}` {:?}",
                grad.shape(),
                e.name,
                e.value.shape()
            )));
        }
        e.grad = grad;
        e.has_grad = true;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        let e = &mut self.entries[id.0];
        for (a, &b) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        e.has_grad = true;
    }

    /// Set every trainable value to zero. Buffers are left alone.
    pub fn zero_trainable(&mut self) {
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            e.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Same names, shapes and values in another precision. Moments are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.value.cast(), e.trainable)
                .expect("names already unique");
        }
        out
    }

    /// True when names, shapes and values agree bit-for-bit.
    pub fn values_equal(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
