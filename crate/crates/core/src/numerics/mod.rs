//! Dense tensors, reverse-mode differentiation, and the Adam optimizer.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use graph::{gelu, softplus, Gradients, Graph, Var};
pub use optim::{Adam, OptimizerConfig};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("row_softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("backward: output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

/// Boolean matrix; `true` marks an excluded (masked) entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    masked: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            masked: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut masked = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                masked.push(f(i, j));
            }
        }
        Self { rows, cols, masked }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.masked[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, masked: bool) {
        self.masked[row * self.cols + col] = masked;
    }

    /// Number of visible entries.
    pub fn visible_count(&self) -> usize {
        self.masked.iter().filter(|m| !**m).count()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owner of every learnable tensor of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            id,
            name: name.into(),
            value,
            grad,
        });
        id
    }

    /// Gaussian-initialized `rows × cols` parameter.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        mean: f64,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(mean, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().find(|p| p.name == name).map(|p| p.id)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's gradients into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(self.params.len(), other.params.len());
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.clone_from(&src.value);
        }
    }
}
