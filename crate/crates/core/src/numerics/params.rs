use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new trainable entry. Fails if the name is taken.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Duplicate(name));
        }
        self.entries.insert(
            name,
            Param {
                tensor,
                trainable: true,
            },
        );
        Ok(())
    }

    /// Inserts or overwrites the tensor, keeping any existing trainable flag.
    pub fn set(&mut self, name: &str, tensor: Tensor) {
        match self.entries.get_mut(name) {
            Some(p) => p.tensor = tensor,
            None => {
                self.entries.insert(
                    name.to_string(),
                    Param {
                        tensor,
                        trainable: true,
                    },
                );
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    /// Same names and dims, all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: Tensor::zeros(p.tensor.dims()),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Accumulates `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &other.entries {
            match self.entries.get_mut(name) {
                Some(dst) => dst.tensor.add_assign(&p.tensor)?,
                None => {
                    self.entries.insert(name.clone(), p.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for p in self.entries.values_mut() {
            for v in p.tensor.data_mut() {
                *v *= k;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|p| p.tensor.sum_sq())
            .sum::<f64>()
            .sqrt()
    }
}
