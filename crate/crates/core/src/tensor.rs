//! Dense row-major `f32` tensors.
//!
//! Image batches use the N×H×W×C layout and feature batches N×F.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// N×H×W×C → N×(H·W·C), keeping row-major order.
    pub fn flatten(&self) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(Error::Shape("cannot flatten a rank-0 tensor".into()));
        }
        let n = self.shape[0];
        self.reshape(&[n, self.numel() / n])
    }

    /// Extent of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as (leading axes) × last axis.
    pub fn outer_len(&self) -> usize {
        self.numel() / self.last_dim().max(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let k = self.last_dim();
        &self.data[i * k..(i + 1) * k]
    }

    /// Concatenate along the last axis.
    pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ra, rb) = (a.rank(), b.rank());
        if ra != rb || ra == 0 || a.shape[..ra - 1] != b.shape[..rb - 1] {
            return Err(Error::Shape(format!(
                "concat needs matching leading axes, got {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (ka, kb) = (a.last_dim(), b.last_dim());
        let rows = a.outer_len();
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for r in 0..rows {
            data.extend_from_slice(&a.data[r * ka..(r + 1) * ka]);
            data.extend_from_slice(&b.data[r * kb..(r + 1) * kb]);
        }
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = ka + kb;
        Tensor::new(shape, data)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let k = self.last_dim();
        if len == 0 || start + len > k {
            return Err(Error::Shape(format!(
                "slice {start}..{} out of range for last axis {k}",
                start + len
            )));
        }
        let rows = self.outer_len();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * k + start..r * k + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        Tensor::new(shape, data)
    }

    /// Gather leading-axis entries (e.g. samples of a batch) in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let n = self.shape.first().copied().unwrap_or(0);
        let stride = self.numel() / n.max(1);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= n {
                return Err(Error::Shape(format!("row {i} out of range for {n} rows")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Index of the maximum along the last axis for every row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.outer_len()).map(|r| argmax(self.row(r))).collect()
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// First index of the maximum value.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
