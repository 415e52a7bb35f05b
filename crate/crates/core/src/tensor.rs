use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// Dense row-major `f32` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(contract!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` view: rank-1 tensors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        as_matrix(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }
}

pub(crate) fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        [lead @ .., c] => (lead.iter().product(), *c),
    }
}
