use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

use super::tape::TapeRef;

/// Dense n-dimensional array of f64 values, row-major.
///
/// The shape is fixed at construction. A tensor optionally carries a handle
/// into the gradient tape it was produced on; tensors without a handle are
/// plain values and never receive gradients. Values are shared behind an
/// `Arc` so the tape can keep the buffers it needs for backward without
/// copying them.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    pub(super) node: Option<TapeRef>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major values.
    ///
    /// Dimension sizes must be positive; the empty shape `[]` denotes a
    /// scalar holding exactly one value.
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::argument(
                "tensor",
                format!("zero-sized dimension in shape {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} implies {expected} values, got {}",
                    values.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            values: Arc::new(values),
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: Arc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            values: Arc::new(vec![v]),
            node: None,
        }
    }

    /// Rank-1 tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            values: Arc::new(values.to_vec()),
            node: None,
        }
    }

    /// Rank-2 tensor from rows; every row must have the same length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("tensor", "ragged rows".to_string()));
        }
        Tensor::from_vec(vec![r, c], rows.concat())
    }

    /// Uniform values in `[lo, hi)`, consumed from `rng` in row-major order.
    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape,
            values: Arc::new(values),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the values, copy-on-write if the buffer is shared
    /// with a tape. Used by the optimizer; the shape cannot change.
    pub fn values_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    pub(super) fn values_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.values)
    }

    /// The single value of a scalar (one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::argument(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ));
        }
        Ok(self.values[0])
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.values[r * self.shape[1] + c]
    }

    /// Copy of this tensor with no tape handle.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    /// Detached copy with one value nudged by `delta` (finite differences).
    pub fn perturbed(&self, index: usize, delta: f64) -> Tensor {
        let mut values = self.values.as_ref().clone();
        values[index] += delta;
        Tensor {
            shape: self.shape.clone(),
            values: Arc::new(values),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}
