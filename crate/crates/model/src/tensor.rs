//! Dense tensors and named parameter collections.

use std::collections::HashMap;

use crate::error::{shape_err, ModelError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Accumulated gradient, same length as `data` when present.
    pub grad: Option<Vec<T>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {} elements, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-D tensor; a 1-D tensor is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.data.len()),
        }
    }
}

/// Gradients for every parameter of a [`ParamSet`], in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            grads: params.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for x in g {
                *x *= s;
            }
        }
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let i = self.tensors.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.tensors.push(t);
        i
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds gradients into each tensor's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        if grads.grads.len() != self.tensors.len() {
            return Err(ModelError::Invalid(format!(
                "{} gradients for {} parameters",
                grads.grads.len(),
                self.tensors.len()
            )));
        }
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            let buf = t.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (x, y) in buf.iter_mut().zip(g) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Multiplies every gradient buffer by `s`.
    pub fn scale_grad(&mut self, s: T) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Converts element type; gradient buffers are dropped.
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            out.push(
                n.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|x| U::from_f64(Scalar::to_f64(*x))).collect(),
                    grad: None,
                },
            );
        }
        out
    }
}
