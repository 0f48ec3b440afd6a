use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, index: usize, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[index].shape() {
            return Err(Error::dim("set_param", self.tensors[index].shape(), t.shape()));
        }
        self.tensors[index] = t;
        Ok(())
    }

    pub fn set_named(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
        self.set(i, t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Puts every tensor on `tape`, as gradient-carrying leaves when `grad`.
    pub fn bind(&self, tape: &mut Tape, grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if grad {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}
