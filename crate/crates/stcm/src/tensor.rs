//! Dense rank-N arrays in row-major order.
//!
//! `Tensor` is the universal value type of the crate: images, activations,
//! weights, and gradients are all tensors. Storage is 64-bit floating point;
//! the on-disk format (see [`crate::io`]) narrows to 32-bit. All reductions
//! run in sequential row-major order so results are bit-reproducible.

use crate::error::{Error, Result};

/// Maximum supported rank. Nothing in the training pipeline needs more than
/// rank 4; the headroom is for batching experiments.
pub const MAX_RANK: usize = 8;

/// Dense numeric array. Shape extents are all >= 1 and
/// `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor rank must be at least 1".into()));
    }
    if shape.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "tensor rank {} exceeds maximum {MAX_RANK}",
            shape.len()
        )));
    }
    let mut n: usize = 1;
    for (axis, &extent) in shape.iter().enumerate() {
        if extent == 0 {
            return Err(Error::Shape(format!("axis {axis} has zero extent")));
        }
        n = n.checked_mul(extent).ok_or_else(|| {
            Error::Shape(format!("element count overflows usize for shape {shape:?}"))
        })?;
    }
    Ok(n)
}

impl Tensor {
    /// Tensor of the given shape with every element equal to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, 0.0)
    }

    /// Wraps an existing row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides: `stride(last) == 1`.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Flat offset of a multi-index (debug-checked against the shape).
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for axis in (0..self.shape.len()).rev() {
            debug_assert!(index[axis] < self.shape[axis]);
            off += index[axis] * stride;
            stride *= self.shape[axis];
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Elementwise application of `f`; shape preserved.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, "zip")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// Adds `c * other` into `self` in place (the SGD update primitive).
    pub fn axpy(&mut self, c: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
        Ok(())
    }

    /// Sequential row-major sum; the fixed order keeps results bit-reproducible.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        let mut acc = 0.0;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Squared L2 norm of the whole buffer.
    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Copy of the `i`-th sub-tensor along axis 0. A `[N,C,H,W]` frames
    /// tensor yields `[C,H,W]` frames.
    pub fn index_outer(&self, i: usize) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::Shape("index_outer requires rank >= 2".into()));
        }
        if i >= self.shape[0] {
            return Err(Error::Shape(format!(
                "outer index {i} out of range for extent {}",
                self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack_outer(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack_outer of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.check_same_shape(t, "stack_outer")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
