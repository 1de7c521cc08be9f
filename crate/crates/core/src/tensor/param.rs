use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "param {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered parameter collection with name lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Param) -> Result<usize> {
        if self.index.contains_key(&p.name) {
            return Err(Error::config(format!("duplicate parameter name {}", p.name)));
        }
        let i = self.params.len();
        self.index.insert(p.name.clone(), i);
        self.params.push(p);
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Fresh graph leaves, one per parameter, in insertion order.
    pub fn leaves(&self, requires_grad: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| {
                if requires_grad {
                    Tensor::param(p.data.clone(), &p.shape)
                } else {
                    Tensor::new(p.data.clone(), &p.shape)
                }
                .expect("param shape checked on insert")
            })
            .collect()
    }

    /// Replaces values from another set with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let q = other
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if q.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {}: shape {:?}, expected {:?}",
                    p.name, q.shape, p.shape
                )));
            }
            p.data.clone_from(&q.data);
        }
        Ok(())
    }
}
