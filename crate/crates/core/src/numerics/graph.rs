//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so walking the tape backwards visits
//! each node after all of its consumers. [`Graph::backward`] returns the
//! per-parameter gradients, which are folded into a [`ParamStore`] with
//! [`ParamStore::accumulate`].

use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{mm, mm_nt, mm_tn};
use super::{Mask, NumericsError, ParamId, ParamStore, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Softplus(Var),
    Gather(Var, Arc<Vec<usize>>),
    Scatter(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mse(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Huber { pred: Var, target: Var, delta: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.by_param.iter()
    }

    /// Adds `other` into `self`, summing shared entries.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.by_param {
            match self.by_param.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.by_param.insert(id, g);
                }
            }
        }
    }
}

/// Recording of a forward computation over parameters and inputs.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: vec![a.rows(), a.cols()],
        rhs: vec![b.rows(), b.cols()],
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    // tanh through a single exp; libm's tanh is several times slower
    let t = 1.0 - 2.0 / ((2.0 * inner).exp() + 1.0);
    let value = 0.5 * x * (1.0 + t);
    let d_inner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
    (value, deriv)
}

/// GELU (tanh approximation), the nonlinearity used throughout the crate.
pub fn gelu(x: f64) -> f64 {
    gelu_parts(x).0
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated requests for the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let out = mm(av, bv);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(mismatch("matmul_nt", av, bv));
        }
        let out = mm_nt(av, bv);
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch(op_name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::matrix(av.rows(), av.cols(), data);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av, rv));
        }
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| x + rv.data()[k % c])
            .collect();
        let out = Tensor::matrix(av.rows(), c, data);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("mul_row", av, rv));
        }
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| x * rv.data()[k % c])
            .collect();
        let out = Tensor::matrix(av.rows(), c, data);
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// `x · w + b` with `b` a `1 × out` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| {
            NumericsError::InvalidTensor("concat_cols: no operands".to_string())
        })?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                len: av.rows(),
            });
        }
        let c = av.cols();
        let out = Tensor::matrix(len, c, av.data()[start * c..(start + len) * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Softmax along each row. Masked entries get exactly zero weight.
    pub fn row_softmax(&mut self, a: Var, mask: Option<Arc<Mask>>) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let (r, c) = av.dims();
        if let Some(m) = &mask {
            if m.rows() != r || m.cols() != c {
                return Err(NumericsError::ShapeMismatch {
                    op: "row_softmax",
                    lhs: vec![r, c],
                    rhs: vec![m.rows(), m.cols()],
                });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = av.row(i);
            let visible = |j: usize| mask.as_ref().is_none_or(|m| !m.is_masked(i, j));
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if visible(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::FullyMaskedRow { row: i });
            }
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if visible(j) {
                    let e = (v - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= total;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::Softmax(a)))
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.dims();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = av.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out[i * c + j] = (v - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(Tensor::matrix(r, c, out), Op::LayerNorm { x: a, inv_std })
    }

    /// Layer normalization followed by a per-column gain and bias.
    pub fn layer_norm_affine(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let n = self.layer_norm(a);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// `out[k] = a.flat[indices[k]]`, shaped `rows × cols`.
    pub fn gather(
        &mut self,
        a: Var,
        indices: Arc<Vec<usize>>,
        rows: usize,
        cols: usize,
    ) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if rows * cols != indices.len() {
            return Err(NumericsError::InvalidTensor(format!(
                "gather: {} indices for a {rows}x{cols} output",
                indices.len()
            )));
        }
        let mut data = Vec::with_capacity(indices.len());
        for &k in indices.iter() {
            if k >= av.len() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather",
                    index: k,
                    len: av.len(),
                });
            }
            data.push(av.data()[k]);
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::Gather(a, indices)))
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let c = self.value(table).cols();
        let rows = self.value(table).rows();
        let mut idx = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    len: rows,
                });
            }
            idx.extend((0..c).map(|j| id * c + j));
        }
        self.gather(table, Arc::new(idx), ids.len(), c)
    }

    /// Zero tensor of shape `rows × cols` with `a.flat[k]` added at `indices[k]`.
    pub fn scatter(
        &mut self,
        a: Var,
        indices: Arc<Vec<usize>>,
        rows: usize,
        cols: usize,
    ) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if av.len() != indices.len() {
            return Err(NumericsError::InvalidTensor(format!(
                "scatter: {} values for {} indices",
                av.len(),
                indices.len()
            )));
        }
        let mut data = vec![0.0; rows * cols];
        for (&k, &v) in indices.iter().zip(av.data()) {
            if k >= data.len() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "scatter",
                    index: k,
                    len: data.len(),
                });
            }
            data[k] += v;
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::Scatter(a, indices)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NumericsError> {
        let (p, t) = (self.value(pred), self.value(target));
        if !p.same_shape(t) {
            return Err(mismatch("mse", p, t));
        }
        let n = p.len().max(1) as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target)))
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        let (r, c) = lv.dims();
        if targets.len() != r {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![r, c],
                rhs: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(NumericsError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: c,
                });
            }
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / r.max(1) as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean Huber loss with threshold `delta`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var, NumericsError> {
        let (p, t) = (self.value(pred), self.value(target));
        if !p.same_shape(t) {
            return Err(mismatch("huber", p, t));
        }
        let n = p.len().max(1) as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| {
                let d = (a - b).abs();
                if d <= delta {
                    0.5 * d * d
                } else {
                    delta * (d - 0.5 * delta)
                }
            })
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Huber { pred, target, delta }))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(self, output: Var) -> Result<Gradients, NumericsError> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(NumericsError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out_val.rows(), out_val.cols(), 1.0));
        let mut result = Gradients::default();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    result.by_param.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, mm_nt(&g, bv));
                    acc(&mut grads, *b, mm_tn(av, &g));
                }
                Op::MatMulNt(a, b) => {
                    // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, mm(&g, bv));
                    acc(&mut grads, *b, mm_tn(&g, av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip(&g, bv, |x, y| x * y);
                    let gb = zip(&g, av, |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g.map(|v| v * f)),
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    for (k, v) in g.data().iter().enumerate() {
                        gr[k % c] += v;
                    }
                    acc(&mut grads, *row, Tensor::matrix(1, c, gr));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    let mut ga = vec![0.0; g.len()];
                    for (k, v) in g.data().iter().enumerate() {
                        gr[k % c] += v * av.data()[k];
                        ga[k] = v * rv.data()[k % c];
                    }
                    acc(&mut grads, *row, Tensor::matrix(1, c, gr));
                    acc(&mut grads, *a, Tensor::matrix(g.rows(), c, ga));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let r = g.rows();
                        let mut data = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            data.extend_from_slice(&g.row(i)[offset..offset + pc]);
                        }
                        acc(&mut grads, p, Tensor::matrix(r, pc, data));
                        offset += pc;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut full = Tensor::zeros(av.rows(), c);
                    full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, full);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let (r, c) = y.dims();
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(r, c, gx));
                }
                Op::LayerNorm { x, inv_std } => {
                    let xhat = &node.value;
                    let (r, c) = xhat.dims();
                    let n = c as f64;
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        let xr = xhat.row(i);
                        let gr = g.row(i);
                        let sum_g: f64 = gr.iter().sum();
                        let sum_gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = inv_std[i] / n * (n * gr[j] - sum_g - xr[j] * sum_gx);
                        }
                    }
                    acc(&mut grads, *x, Tensor::matrix(r, c, gx));
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let gx = zip(&g, av, |gv, x| gv * gelu_parts(x).1);
                    acc(&mut grads, *a, gx);
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    let gx = zip(&g, av, |gv, x| gv * sigmoid(x));
                    acc(&mut grads, *a, gx);
                }
                Op::Gather(a, indices) => {
                    let av = self.value(*a);
                    let mut gx = Tensor::zeros(av.rows(), av.cols());
                    for (&k, &v) in indices.iter().zip(g.data()) {
                        gx.data_mut()[k] += v;
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::Scatter(a, indices) => {
                    let av = self.value(*a);
                    let data = indices.iter().map(|&k| g.data()[k]).collect();
                    acc(&mut grads, *a, Tensor::matrix(av.rows(), av.cols(), data));
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), g.item()));
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let scale = 2.0 * g.item() / pv.len().max(1) as f64;
                    let gp = zip(pv, tv, |a, b| scale * (a - b));
                    acc(&mut grads, *t, gp.map(|v| -v));
                    acc(&mut grads, *p, gp);
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = self.value(*logits);
                    let (r, c) = lv.dims();
                    let scale = g.item() / r.max(1) as f64;
                    let mut gx = vec![0.0; r * c];
                    for (i, &t) in targets.iter().enumerate() {
                        let row = lv.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - max).exp() / z;
                            gx[i * c + j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *logits, Tensor::matrix(r, c, gx));
                }
                Op::Huber { pred, target, delta } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let scale = g.item() / pv.len().max(1) as f64;
                    let d = *delta;
                    let gp = zip(pv, tv, |a, b| scale * (a - b).clamp(-d, d));
                    acc(&mut grads, *target, gp.map(|v| -v));
                    acc(&mut grads, *pred, gp);
                }
            }
        }
        Ok(result)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}
