//! Dense row-major tensors. A tensor optionally carries a handle to the tape
//! node that produced it; detached tensors are plain immutable values.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data: Arc::new(data), node: None })
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![v]), node: None }
    }

    pub fn vector(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![S::zero(); numel]), node: None }
    }

    pub fn full(shape: Vec<usize>, v: S) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![v; numel]), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access via copy-on-write; used by the optimizer on detached
    /// parameter tensors.
    pub fn data_mut(&mut self) -> &mut [S] {
        let v: &mut Vec<S> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, id: NodeId) -> Self {
        self.node = Some(id);
        self
    }

    pub fn detached(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Scalar payload of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if !self.is_scalar() {
            return Err(Error::NonScalarLoss(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Leading dimension interpreted as row count; 1 for vectors.
    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }
}

/// Sums values in ascending value order. The result depends only on the
/// multiset of inputs, which makes reductions over unordered collections
/// (graph messages, object pools) bit-exact under permutation.
pub fn sorted_sum<S: Scalar>(values: &mut [S]) -> S {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = S::zero();
    for v in values.iter() {
        acc += *v;
    }
    acc
}
