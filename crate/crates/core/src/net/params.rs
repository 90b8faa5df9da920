use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// How a parameter was initialized; decides its init rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Fan-in scaled uniform draw.
    Weight,
    /// Zero.
    Bias,
    /// One (normalization gain).
    Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub frozen: bool,
    pub role: ParamRole,
}

impl<T> Param<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered, named, shape-tagged parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { entries: IndexMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<T>, role: ParamRole) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{name}`: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, Param { shape, values, frozen: false, role });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Param::len).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    /// Values of a parameter that the model layout guarantees to exist.
    pub(crate) fn values(&self, name: &str) -> &[T] {
        match self.entries.get(name) {
            Some(p) => &p.values,
            None => panic!("parameter `{name}` missing from store"),
        }
    }

    pub(crate) fn slot(&self, name: &str) -> usize {
        self.index_of(name).unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.frozen)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_at(&self, index: usize) -> (&str, &Param<T>) {
        let (k, v) = self.entries.get_index(index).expect("index in range");
        (k.as_str(), v)
    }

    pub fn param_at_mut(&mut self, index: usize) -> (&str, &mut Param<T>) {
        let (k, v) = self.entries.get_index_mut(index).expect("index in range");
        (k.as_str(), v)
    }

    /// Remove every entry whose name starts with `prefix`; returns how many were removed.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|k, _| !k.starts_with(prefix));
        before - self.entries.len()
    }

    /// Flag every entry whose name starts with `prefix` as frozen or trainable.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (k, p) in self.entries.iter_mut() {
            if k.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    /// Copy of the entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Insert all entries of `other`; names must not collide.
    pub fn merge(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, p) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::Config(format!("duplicate parameter name `{k}`")));
            }
            self.entries.insert(k, p);
        }
        Ok(())
    }

    /// Ok when both stores have identical names (in order) and shapes.
    pub fn check_same_layout<U: Scalar>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "stores hold {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, pa), (kb, pb)) in self.entries.iter().zip(other.entries.iter()) {
            if ka != kb || pa.shape != pb.shape {
                return Err(Error::ShapeMismatch(format!(
                    "`{ka}` {:?} vs `{kb}` {:?}",
                    pa.shape, pb.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            shape: p.shape.clone(),
                            values: p.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                            frozen: p.frozen,
                            role: p.role,
                        },
                    )
                })
                .collect(),
        }
    }

    /// All values concatenated in entry order as little-endian `f32` bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.numel() * 4);
        for p in self.entries.values() {
            for v in &p.values {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Bytes of the entries matching `prefix`; used to assert freezing.
    pub fn prefix_bytes(&self, prefix: &str) -> Vec<u8> {
        self.subset(prefix).to_le_bytes()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with a store's entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub slots: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { slots: store.entries.values().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    pub fn slot_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.slots[index]
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.slots.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn get(&self, store_index: usize, offset: usize) -> T {
        self.slots[store_index][offset]
    }
}
