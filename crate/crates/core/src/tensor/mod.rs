//! Dense `f32` tensors, the reverse-mode tape that differentiates them, and
//! the binary checkpoint container.
//!
//! Tensors are row-major and never broadcast: every binary operation requires
//! identical shapes, and batch dimensions are always explicit and leading.

pub mod checkpoint;
pub mod kernels;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::{invalid, shape_err, Result};

/// Dense row-major array of `f32` with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return invalid(format!("tensor extents must be positive, got {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            );
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; numel])
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![1], data: vec![value], grad: None }
    }

    /// Row vector `[1 × n]`.
    pub fn row(values: &[f32]) -> Result<Self> {
        Self::new(vec![1, values.len()], values.to_vec())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), (0..numel).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Leading extent.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all extents after the leading one.
    pub fn row_width(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Last extent.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor rank is at least 1")
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient slot, creating a zeroed slot first if
    /// needed. Shared parameters collect every use this way.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return shape_err(
                "accumulate_grad",
                format!("gradient has {} values, tensor has {}", delta.len(), self.data.len()),
            );
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        slot.iter_mut().zip(delta).for_each(|(s, d)| *s += d);
        Ok(())
    }

    /// Same values and shape, no gradient slot.
    pub fn detached(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.clone(), grad: None }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&e| e == 0) {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }
}
