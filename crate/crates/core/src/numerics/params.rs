use std::collections::HashMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a tensor; replaces the value when the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].1 = value;
            return i;
        }
        self.entries.push((name.clone(), value));
        self.index.insert(name, self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].0
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.entries[id].1
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.entries[id].1
    }

    /// Mutable references to the tensors at strictly increasing `ids`.
    pub fn select_mut(&mut self, ids: &[usize]) -> Vec<&mut Tensor<T>> {
        assert!(ids.windows(2).all(|w| w[0] < w[1]), "ids must be strictly increasing");
        let mut wanted = ids.iter().peekable();
        let mut out = Vec::with_capacity(ids.len());
        for (i, (_, t)) in self.entries.iter_mut().enumerate() {
            if wanted.peek() == Some(&&i) {
                wanted.next();
                out.push(t);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in &self.entries {
            out.insert(n.clone(), t.cast());
        }
        out
    }
}
