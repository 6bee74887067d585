//! Reverse-mode tape.
//!
//! Ops append records to the tape in creation order, which is therefore a
//! topological order; `backward` walks the records once in reverse and
//! accumulates analytic gradients into each node.

use std::cell::RefCell;

use crate::array::{dot, matmul_a_bt, matmul_acc, matmul_at_b, norm, Array};
use crate::NdiffError;

/// Epsilon added to the norm product so degenerate (zero) embeddings do not
/// divide by zero.
pub const COSINE_EPS: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Rule {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { a: usize, alpha: f64 },
    Concat { inputs: Vec<usize>, axis: usize },
    GatherRows { a: usize, indices: Vec<usize> },
    SliceCols { a: usize, start: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Log { a: usize },
    Softmax { a: usize },
    LayerNorm { a: usize, gain: usize, bias: usize, eps: f64 },
    Cosine { a: usize, b: usize },
    CrossEntropy { scores: usize, label: usize },
    Mean { a: usize },
    Sum { a: usize },
}

struct Node {
    value: Array,
    grad: Option<Array>,
    rule: Rule,
}

/// A single-threaded computation tape.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Array, rule: Rule) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            rule,
        });
        Var(nodes.len() - 1)
    }

    /// Insert an input array (parameter or constant) as a leaf node.
    pub fn leaf(&self, value: Array) -> Var {
        self.push(value, Rule::Leaf)
    }

    pub fn value(&self, v: Var) -> Array {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64, NdiffError> {
        self.nodes.borrow()[v.0].value.scalar_value()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Accumulated gradient of `v`; zeros if `v` was never reached by
    /// `backward`.
    pub fn grad(&self, v: Var) -> Array {
        let nodes = self.nodes.borrow();
        match &nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Array::zeros(nodes[v.0].value.shape()),
        }
    }

    pub fn reset_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    // ------------------------------------------------------------------
    // Forward ops
    // ------------------------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NdiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, va.data(), vb.data(), m, k, n);
        Ok(self.push(
            Array::new(vec![m, n], out)?,
            Rule::Matmul { a: a.0, b: b.0 },
        ))
    }

    /// Elementwise add; `b` may also be a scalar or a trailing-shape
    /// broadcast over `a`'s leading axes (e.g. `[m,n] + [n]`).
    pub fn add(&self, a: Var, b: Var) -> Result<Var, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !broadcast_ok(va.shape(), vb.shape()) {
            return Err(NdiffError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let bs = vb.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bs[i % bs.len()])
            .collect();
        Ok(self.push(
            Array::new(va.shape().to_vec(), data)?,
            Rule::Add { a: a.0, b: b.0 },
        ))
    }

    /// Elementwise product. Shapes must match exactly, or `b` is a scalar.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() && !vb.is_scalar() {
            return Err(NdiffError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let bs = vb.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bs[i % bs.len()])
            .collect();
        Ok(self.push(
            Array::new(va.shape().to_vec(), data)?,
            Rule::Mul { a: a.0, b: b.0 },
        ))
    }

    /// `alpha * a + beta`, elementwise with constant coefficients.
    pub fn affine(&self, a: Var, alpha: f64, beta: f64) -> Result<Var, NdiffError> {
        let va = self.value(a);
        Ok(self.push(va.map(|x| alpha * x + beta), Rule::Affine { a: a.0, alpha }))
    }

    /// Concatenate along `axis` (0 or, for matrices, 1).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var, NdiffError> {
        if parts.is_empty() {
            return Err(NdiffError::BadShape {
                op: "concat",
                expected: "at least one input",
                shape: vec![],
            });
        }
        let values: Vec<Array> = parts.iter().map(|p| self.value(*p)).collect();
        let rank = values[0].shape().len();
        if axis > 1 || (axis == 1 && rank != 2) {
            return Err(NdiffError::BadShape {
                op: "concat",
                expected: "axis 0, or axis 1 on matrices",
                shape: values[0].shape().to_vec(),
            });
        }
        let out = if axis == 0 {
            let cols = values[0].last_dim();
            let mut rows = 0;
            let mut data = Vec::new();
            for v in &values {
                if v.shape().len() != rank || (rank == 2 && v.last_dim() != cols) {
                    return Err(NdiffError::ShapeMismatch {
                        op: "concat",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                rows += v.leading();
                data.extend_from_slice(v.data());
            }
            if rank == 1 {
                let total = data.len();
                Array::new(vec![total], data)?
            } else {
                Array::new(vec![rows, cols], data)?
            }
        } else {
            let rows = values[0].leading();
            let mut cols = 0;
            for v in &values {
                if v.shape().len() != 2 || v.leading() != rows {
                    return Err(NdiffError::ShapeMismatch {
                        op: "concat",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                cols += v.last_dim();
            }
            let mut data = vec![0.0; rows * cols];
            let mut offset = 0;
            for v in &values {
                let w = v.last_dim();
                for r in 0..rows {
                    data[r * cols + offset..r * cols + offset + w].copy_from_slice(v.row(r));
                }
                offset += w;
            }
            Array::new(vec![rows, cols], data)?
        };
        Ok(self.push(
            out,
            Rule::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    /// Gather rows of a matrix by index; duplicate indices are allowed and
    /// their gradients accumulate.
    pub fn gather_rows(&self, a: Var, indices: &[usize]) -> Result<Var, NdiffError> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(NdiffError::BadShape {
                op: "gather_rows",
                expected: "a matrix",
                shape: va.shape().to_vec(),
            });
        }
        let (rows, cols) = (va.shape()[0], va.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(NdiffError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(va.row(i));
        }
        Ok(self.push(
            Array::new(vec![indices.len(), cols], data)?,
            Rule::GatherRows {
                a: a.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row lookup into an embedding table (`gather_rows` under a
    /// domain-specific name).
    pub fn embedding_lookup(&self, table: Var, ids: &[usize]) -> Result<Var, NdiffError> {
        self.gather_rows(table, ids)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var, NdiffError> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(NdiffError::BadShape {
                op: "slice_cols",
                expected: "a matrix",
                shape: va.shape().to_vec(),
            });
        }
        let (rows, cols) = (va.shape()[0], va.shape()[1]);
        if start >= end || end > cols {
            return Err(NdiffError::IndexOutOfBounds {
                op: "slice_cols",
                index: end,
                bound: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        Ok(self.push(
            Array::new(vec![rows, end - start], data)?,
            Rule::SliceCols { a: a.0, start },
        ))
    }

    pub fn transpose(&self, a: Var) -> Result<Var, NdiffError> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(NdiffError::BadShape {
                op: "transpose",
                expected: "a matrix",
                shape: va.shape().to_vec(),
            });
        }
        let (rows, cols) = (va.shape()[0], va.shape()[1]);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = va.data()[r * cols + c];
            }
        }
        Ok(self.push(Array::new(vec![cols, rows], data)?, Rule::Transpose { a: a.0 }))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, NdiffError> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.len() {
            return Err(NdiffError::BadShape {
                op: "reshape",
                expected: "a shape holding the same element count",
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(
            Array::new(shape.to_vec(), va.data().to_vec())?,
            Rule::Reshape { a: a.0 },
        ))
    }

    pub fn tanh(&self, a: Var) -> Result<Var, NdiffError> {
        Ok(self.push(self.value(a).map(f64::tanh), Rule::Tanh { a: a.0 }))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var, NdiffError> {
        Ok(self.push(
            self.value(a).map(|x| 1.0 / (1.0 + (-x).exp())),
            Rule::Sigmoid { a: a.0 },
        ))
    }

    pub fn log(&self, a: Var) -> Result<Var, NdiffError> {
        Ok(self.push(self.value(a).map(f64::ln), Rule::Log { a: a.0 }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var, NdiffError> {
        let va = self.value(a);
        let mut out = va.clone();
        let d = out.last_dim();
        if d == 0 {
            return Err(NdiffError::BadShape {
                op: "softmax",
                expected: "a non-empty last axis",
                shape: va.shape().to_vec(),
            });
        }
        for r in 0..out.leading() {
            softmax_row_in_place(out.row_mut(r));
        }
        Ok(self.push(out, Rule::Softmax { a: a.0 }))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NdiffError> {
        let (va, vg, vb) = (self.value(a), self.value(gain), self.value(bias));
        let d = va.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(NdiffError::ShapeMismatch {
                op: "layer_norm",
                lhs: va.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        for r in 0..out.leading() {
            let row = out.row_mut(r);
            let (mean, inv_std) = row_moments(row, eps);
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * inv_std * vg.data()[j] + vb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Rule::LayerNorm {
                a: a.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
        ))
    }

    /// `a . b / (|a| |b| + eps)` over flattened arrays of equal length.
    pub fn cosine_similarity(&self, a: Var, b: Var) -> Result<Var, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() || va.is_empty() {
            return Err(NdiffError::ShapeMismatch {
                op: "cosine_similarity",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let c = dot(va.data(), vb.data()) / (norm(va.data()) * norm(vb.data()) + COSINE_EPS);
        Ok(self.push(Array::scalar(c), Rule::Cosine { a: a.0, b: b.0 }))
    }

    /// `-log softmax(scores)[label]` for a flat score vector.
    pub fn cross_entropy(&self, scores: Var, label: usize) -> Result<Var, NdiffError> {
        let vs = self.value(scores);
        if vs.is_empty() {
            return Err(NdiffError::BadShape {
                op: "cross_entropy",
                expected: "a non-empty score vector",
                shape: vs.shape().to_vec(),
            });
        }
        if label >= vs.len() {
            return Err(NdiffError::IndexOutOfBounds {
                op: "cross_entropy",
                index: label,
                bound: vs.len(),
            });
        }
        let loss = log_sum_exp(vs.data()) - vs.data()[label];
        Ok(self.push(
            Array::scalar(loss),
            Rule::CrossEntropy {
                scores: scores.0,
                label,
            },
        ))
    }

    pub fn mean(&self, a: Var) -> Result<Var, NdiffError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(NdiffError::BadShape {
                op: "mean",
                expected: "a non-empty array",
                shape: va.shape().to_vec(),
            });
        }
        let m = va.iter().sum::<f64>() / va.len() as f64;
        Ok(self.push(Array::scalar(m), Rule::Mean { a: a.0 }))
    }

    pub fn sum(&self, a: Var) -> Result<Var, NdiffError> {
        let va = self.value(a);
        Ok(self.push(Array::scalar(va.iter().sum()), Rule::Sum { a: a.0 }))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Accumulate `d(loss)/d(node)` into every node reachable from `loss`.
    /// Repeated calls without `reset_grads` keep accumulating.
    pub fn backward(&self, loss: Var) -> Result<(), NdiffError> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(NdiffError::NotScalar {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            for (input, contribution) in contributions(&nodes, id, &gout)? {
                match &mut grads[input] {
                    Some(g) => g.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            match &mut nodes[id].grad {
                Some(g) => g.add_assign(&gout),
                slot => *slot = Some(gout),
            }
        }
        Ok(())
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    if a == b {
        return true;
    }
    let nb: usize = b.iter().product();
    nb == 1 || (b.len() <= a.len() && a.ends_with(b))
}

fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Gradient contributions of node `id` to each of its inputs.
fn contributions(
    nodes: &[Node],
    id: usize,
    gout: &Array,
) -> Result<Vec<(usize, Array)>, NdiffError> {
    let rule = nodes[id].rule.clone();
    let out = |r: Vec<(usize, Array)>| Ok(r);
    match rule {
        Rule::Leaf => out(vec![]),
        Rule::Matmul { a, b } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut ga = Array::zeros(va.shape());
            let mut gb = Array::zeros(vb.shape());
            matmul_a_bt(ga.data_mut(), gout.data(), vb.data(), m, n, k);
            matmul_at_b(gb.data_mut(), va.data(), gout.data(), m, k, n);
            out(vec![(a, ga), (b, gb)])
        }
        Rule::Add { a, b } => {
            let vb = &nodes[b].value;
            let mut gb = Array::zeros(vb.shape());
            let nb = vb.len();
            for (i, &g) in gout.data().iter().enumerate() {
                gb.data_mut()[i % nb] += g;
            }
            out(vec![(a, gout.clone()), (b, gb)])
        }
        Rule::Mul { a, b } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let nb = vb.len();
            let ga = Array::new(
                va.shape().to_vec(),
                gout.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * vb.data()[i % nb])
                    .collect(),
            )?;
            let mut gb = Array::zeros(vb.shape());
            for (i, &g) in gout.data().iter().enumerate() {
                gb.data_mut()[i % nb] += g * va.data()[i];
            }
            out(vec![(a, ga), (b, gb)])
        }
        Rule::Affine { a, alpha } => out(vec![(a, gout.map(|g| g * alpha))]),
        Rule::Concat { inputs, axis } => {
            let mut result = Vec::with_capacity(inputs.len());
            if axis == 0 {
                let mut offset = 0;
                for &input in &inputs {
                    let v = &nodes[input].value;
                    let g = Array::new(
                        v.shape().to_vec(),
                        gout.data()[offset..offset + v.len()].to_vec(),
                    )?;
                    offset += v.len();
                    result.push((input, g));
                }
            } else {
                let rows = nodes[inputs[0]].value.leading();
                let total = gout.last_dim();
                let mut offset = 0;
                for &input in &inputs {
                    let v = &nodes[input].value;
                    let w = v.last_dim();
                    let mut g = Array::zeros(v.shape());
                    for r in 0..rows {
                        g.row_mut(r)
                            .copy_from_slice(&gout.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    result.push((input, g));
                }
            }
            out(result)
        }
        Rule::GatherRows { a, indices } => {
            let mut ga = Array::zeros(nodes[a].value.shape());
            for (j, &i) in indices.iter().enumerate() {
                let grow = gout.row(j).to_vec();
                for (dst, src) in ga.row_mut(i).iter_mut().zip(grow.iter()) {
                    *dst += src;
                }
            }
            out(vec![(a, ga)])
        }
        Rule::SliceCols { a, start } => {
            let va = &nodes[a].value;
            let mut ga = Array::zeros(va.shape());
            let w = gout.last_dim();
            for r in 0..gout.leading() {
                let grow = gout.row(r);
                ga.row_mut(r)[start..start + w].copy_from_slice(grow);
            }
            out(vec![(a, ga)])
        }
        Rule::Transpose { a } => {
            let (rows, cols) = (gout.shape()[0], gout.shape()[1]);
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    data[c * rows + r] = gout.data()[r * cols + c];
                }
            }
            out(vec![(a, Array::new(vec![cols, rows], data)?)])
        }
        Rule::Reshape { a } => {
            let va = &nodes[a].value;
            out(vec![(
                a,
                Array::new(va.shape().to_vec(), gout.data().to_vec())?,
            )])
        }
        Rule::Tanh { a } => {
            let y = &nodes[id].value;
            out(vec![(
                a,
                Array::new(
                    y.shape().to_vec(),
                    gout.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| g * (1.0 - v * v))
                        .collect(),
                )?,
            )])
        }
        Rule::Sigmoid { a } => {
            let y = &nodes[id].value;
            out(vec![(
                a,
                Array::new(
                    y.shape().to_vec(),
                    gout.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| g * v * (1.0 - v))
                        .collect(),
                )?,
            )])
        }
        Rule::Log { a } => {
            let va = &nodes[a].value;
            out(vec![(
                a,
                Array::new(
                    va.shape().to_vec(),
                    gout.data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &v)| g / v)
                        .collect(),
                )?,
            )])
        }
        Rule::Softmax { a } => {
            let y = &nodes[id].value;
            let mut ga = Array::zeros(y.shape());
            let d = y.last_dim();
            for r in 0..y.leading() {
                let yr = y.row(r);
                let gr = &gout.data()[r * d..(r + 1) * d];
                let inner = dot(gr, yr);
                for (j, dst) in ga.row_mut(r).iter_mut().enumerate() {
                    *dst = yr[j] * (gr[j] - inner);
                }
            }
            out(vec![(a, ga)])
        }
        Rule::LayerNorm { a, gain, bias, eps } => {
            let (va, vg) = (&nodes[a].value, &nodes[gain].value);
            let d = va.last_dim();
            let mut ga = Array::zeros(va.shape());
            let mut ggain = Array::zeros(vg.shape());
            let mut gbias = Array::zeros(vg.shape());
            for r in 0..va.leading() {
                let xr = va.row(r);
                let gr = gout.row(r);
                let (mean, inv_std) = row_moments(xr, eps);
                let xhat: Vec<f64> = xr.iter().map(|&x| (x - mean) * inv_std).collect();
                let dxhat: Vec<f64> = gr
                    .iter()
                    .zip(vg.data())
                    .map(|(&g, &gn)| g * gn)
                    .collect();
                for j in 0..d {
                    ggain.data_mut()[j] += gr[j] * xhat[j];
                    gbias.data_mut()[j] += gr[j];
                }
                let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(&g, &x)| g * x).sum::<f64>() / d as f64;
                for (j, dst) in ga.row_mut(r).iter_mut().enumerate() {
                    *dst = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            out(vec![(a, ga), (gain, ggain), (bias, gbias)])
        }
        Rule::Cosine { a, b } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let g = gout.scalar_value()?;
            let (na, nb) = (norm(va.data()), norm(vb.data()));
            let s = dot(va.data(), vb.data());
            let p = na * nb + COSINE_EPS;
            let na_safe = na.max(1e-12);
            let nb_safe = nb.max(1e-12);
            let ga = Array::new(
                va.shape().to_vec(),
                va.data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&ai, &bi)| g * (bi / p - s * nb * ai / (na_safe * p * p)))
                    .collect(),
            )?;
            let gb = Array::new(
                vb.shape().to_vec(),
                va.data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&ai, &bi)| g * (ai / p - s * na * bi / (nb_safe * p * p)))
                    .collect(),
            )?;
            out(vec![(a, ga), (b, gb)])
        }
        Rule::CrossEntropy { scores, label } => {
            let vs = &nodes[scores].value;
            let g = gout.scalar_value()?;
            let mut probs = vs.data().to_vec();
            softmax_row_in_place(&mut probs);
            probs[label] -= 1.0;
            out(vec![(
                scores,
                Array::new(vs.shape().to_vec(), probs.iter().map(|&p| g * p).collect())?,
            )])
        }
        Rule::Mean { a } => {
            let va = &nodes[a].value;
            let g = gout.scalar_value()? / va.len() as f64;
            out(vec![(a, Array::new(va.shape().to_vec(), vec![g; va.len()])?)])
        }
        Rule::Sum { a } => {
            let va = &nodes[a].value;
            let g = gout.scalar_value()?;
            out(vec![(a, Array::new(va.shape().to_vec(), vec![g; va.len()])?)])
        }
    }
}
