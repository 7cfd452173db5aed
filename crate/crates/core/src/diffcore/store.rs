//! Trainable parameter storage.
//!
//! All parameters of a model live in one `ParamStore` arena and are addressed
//! by `ParamId`. Each entry carries its value, the gradient buffer filled by
//! `Tape::backward`, and the momentum velocity owned by the optimizer. Names
//! are unique and stable; they key the checkpoint format.

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub velocity: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Grad and velocity start zeroed.
    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        let velocity = grad.clone();
        self.entries.push(Parameter { name, value, grad, velocity });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.entries.iter_mut().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.values_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, contribution: &Matrix) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if !entry.grad.same_shape(contribution) {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{} vs {}", entry.grad.shape_str(), contribution.shape_str()),
            ));
        }
        for (g, c) in entry.grad.values_mut().iter_mut().zip(contribution.values()) {
            *g += c;
        }
        Ok(())
    }
}
