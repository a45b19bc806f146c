//! Eager reverse-mode differentiation over an append-only tape.
//!
//! Every operation evaluates immediately and appends a node holding its output
//! value. [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid reverse topological order because inputs always precede their consumers.

use crate::error::{Error, Result};
use crate::nn::batchnorm::{self, BatchNormStats};
use crate::nn::conv::{self, ConvGeometry};
use crate::tensor::{axis_split, gemm, MatView, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    Max { input: Var, argmax: Vec<usize> },
    Narrow { input: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Softmax { input: Var, axis: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<F> },
    Conv2d { input: Var, weight: Var, geom: ConvGeometry },
    BatchNorm { input: Var, gamma: Var, beta: Var, stats: BatchNormStats<F> },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    retain: bool,
}

#[derive(Debug)]
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`]: populated for every leaf that
/// requires a gradient and every node marked with [`Tape::retain_grad`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bin {
    Add,
    Sub,
    Mul,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            retain: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Keep this node's gradient in the result of [`Tape::backward`].
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            retain: false,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: Bin, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: F, y: F| match kind {
            Bin::Add => x + y,
            Bin::Sub => x - y,
            Bin::Mul => x * y,
        };
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(va.shape().to_vec(), data)
        } else if vb.numel() == 1 {
            let y = vb.data()[0];
            va.map(|x| f(x, y))
        } else if va.numel() == 1 {
            let x = va.data()[0];
            vb.map(|y| f(x, y))
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        };
        let op = match kind {
            Bin::Add => Op::Add(a, b),
            Bin::Sub => Op::Sub(a, b),
            Bin::Mul => Op::Mul(a, b),
        };
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Mul, a, b, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(F::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(F::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    // ---- linear algebra and shape -----------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            F::one(),
            MatView::row_major(va.data(), m, k),
            MatView::row_major(vb.data(), k, n),
            F::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose needs a matrix, got shape {:?}",
                va.shape()
            )));
        }
        let out = transpose2(va);
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    fn reduce_shape(&self, a: Var, axis: Option<usize>) -> Result<Vec<usize>> {
        let shape = self.shape(a);
        match axis {
            None => Ok(vec![1]),
            Some(ax) if ax >= shape.len() => Err(Error::AxisOutOfRange {
                axis: ax,
                rank: shape.len(),
            }),
            Some(ax) => {
                let mut s = shape.to_vec();
                s.remove(ax);
                if s.is_empty() {
                    s.push(1);
                }
                Ok(s)
            }
        }
    }

    fn sum_values(&self, a: Var, axis: Option<usize>) -> Result<Tensor<F>> {
        let out_shape = self.reduce_shape(a, axis)?;
        let va = self.value(a);
        let data = match axis {
            None => vec![va.data().iter().copied().sum()],
            Some(ax) => {
                let (outer, len, inner) = axis_split(va.shape(), ax);
                let mut out = vec![F::zero(); outer * inner];
                for o in 0..outer {
                    for i in 0..len {
                        let src = &va.data()[(o * len + i) * inner..][..inner];
                        for (d, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                out
            }
        };
        Ok(Tensor::from_parts(out_shape, data))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.sum_values(a, axis)?;
        Ok(self.push(out, Op::Sum { input: a, axis }, &[a]))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let count = match axis {
            None => self.value(a).numel(),
            Some(ax) => self.shape(a).get(ax).copied().unwrap_or(1),
        };
        let out = self.sum_values(a, axis)?;
        let inv = F::one() / F::cst(count as f64);
        let out = out.map(|x| x * inv);
        Ok(self.push(out, Op::Mean { input: a, axis }, &[a]))
    }

    /// Maximum along `axis` (or over everything). Ties resolve to the first index.
    pub fn max(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let out_shape = self.reduce_shape(a, axis)?;
        let va = self.value(a);
        let (outer, len, inner) = match axis {
            None => (1, va.numel(), 1),
            Some(ax) => axis_split(va.shape(), ax),
        };
        let mut vals = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let mut best = (o * len) * inner + j;
                for i in 1..len {
                    let idx = (o * len + i) * inner + j;
                    if va.data()[idx] > va.data()[best] {
                        best = idx;
                    }
                }
                vals.push(va.data()[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::from_parts(out_shape, vals);
        Ok(self.push(out, Op::Max { input: a, argmax }, &[a]))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: va.rank(),
            });
        }
        if len == 0 || start + len > va.shape()[axis] {
            return Err(Error::invalid(format!(
                "narrow [{start}, {}) outside axis {axis} of shape {:?}",
                start + len,
                va.shape()
            )));
        }
        let (outer, full, inner) = axis_split(va.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&va.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, Op::Narrow { input: a, axis, start }, &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: va.rank(),
            });
        }
        let (outer, len, inner) = axis_split(va.shape(), axis);
        let mut out = va.data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let m = (0..len).map(|i| out[idx(i)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for i in 0..len {
                    let e = (out[idx(i)] - m).exp();
                    out[idx(i)] = e;
                    z = z + e;
                }
                for i in 0..len {
                    out[idx(i)] = out[idx(i)] / z;
                }
            }
        }
        let out = Tensor::from_parts(va.shape().to_vec(), out);
        Ok(self.push(out, Op::Softmax { input: a, axis }, &[a]))
    }

    /// Mean negative log-softmax of the labelled class over the rows of `[N, K]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: v.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let (n, k) = (v.shape()[0], v.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let mut probs = vec![F::zero(); n * k];
        let mut loss = F::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &v.data()[r * k..][..k];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - m).exp()).sum();
            let log_z = z.ln() + m;
            loss = loss + (log_z - row[label]);
            for (p, &x) in probs[r * k..][..k].iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        let loss = loss / F::cst(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    // ---- layers ------------------------------------------------------------

    /// Grouped 2-D cross-correlation of `[N, C_in, H, W]` with `[C_out, C_in/g, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, geom: ConvGeometry) -> Result<Var> {
        let out = conv::forward(self.value(input), self.value(weight), &geom)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                geom,
            },
            &[input, weight],
        ))
    }

    /// Per-channel normalization of `[N, C, H, W]`. With `running = None` the batch
    /// statistics are used (training); otherwise the given mean and variance.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[F], &[F])>,
        eps: F,
    ) -> Result<(Var, BatchNormStats<F>)> {
        let (out, stats) = batchnorm::forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running,
            eps,
        )?;
        let var = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                stats: stats.clone(),
            },
            &[input, gamma, beta],
        );
        Ok((var, stats))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Reverse pass from a one-element `loss`. The tape is left intact, so values
    /// remain readable and the tape can be differentiated again.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![F::one()]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Leaf) || node.retain {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, contribution: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a broadcast binary operand: summed when the operand was a scalar.
    fn fit_to(&self, v: Var, g: Tensor<F>) -> Tensor<F> {
        let target = self.value(v);
        if target.shape() == g.shape() {
            g
        } else {
            let s: F = g.data().iter().copied().sum();
            Tensor::from_parts(target.shape().to_vec(), vec![s])
        }
    }

    /// Broadcast-aware read of operand `v` at output position `i`.
    fn at(&self, v: Var, i: usize) -> F {
        let t = self.value(v);
        if t.numel() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    }

    fn propagate(&self, op: &Op<F>, out: &Tensor<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, self.fit_to(*a, g.clone()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.fit_to(*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, self.fit_to(*a, g.clone()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.fit_to(*b, g.map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = (0..gd.len()).map(|i| gd[i] * self.at(*b, i)).collect();
                    let t = Tensor::from_parts(g.shape().to_vec(), d);
                    self.accumulate(grads, *a, self.fit_to(*a, t));
                }
                if self.wants(*b) {
                    let d = (0..gd.len()).map(|i| gd[i] * self.at(*a, i)).collect();
                    let t = Tensor::from_parts(g.shape().to_vec(), d);
                    self.accumulate(grads, *b, self.fit_to(*b, t));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * *c)),
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| if y > F::zero() { gi } else { F::zero() })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * (F::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out.data()).map(|(&gi, &y)| gi * y).collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    let mut d = vec![F::zero(); m * k];
                    gemm(
                        F::one(),
                        MatView::row_major(gd, m, n),
                        MatView::transposed(vb.data(), k, n),
                        F::zero(),
                        &mut d,
                    );
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], d));
                }
                if self.wants(*b) {
                    let mut d = vec![F::zero(); k * n];
                    gemm(
                        F::one(),
                        MatView::transposed(va.data(), m, k),
                        MatView::row_major(gd, m, n),
                        F::zero(),
                        &mut d,
                    );
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], d));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose2(g)),
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let vin = self.value(*input);
                let (outer, len, inner) = match axis {
                    None => (1, vin.numel(), 1),
                    Some(ax) => axis_split(vin.shape(), *ax),
                };
                let factor = if matches!(op, Op::Mean { .. }) {
                    F::one() / F::cst(len as f64)
                } else {
                    F::one()
                };
                let mut d = vec![F::zero(); vin.numel()];
                for o in 0..outer {
                    for i in 0..len {
                        for j in 0..inner {
                            d[(o * len + i) * inner + j] = gd[o * inner + j] * factor;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::from_parts(vin.shape().to_vec(), d));
            }
            Op::Max { input, argmax } => {
                let vin = self.value(*input);
                let mut d = vec![F::zero(); vin.numel()];
                for (&src, &gi) in argmax.iter().zip(gd) {
                    d[src] = d[src] + gi;
                }
                self.accumulate(grads, *input, Tensor::from_parts(vin.shape().to_vec(), d));
            }
            Op::Narrow { input, axis, start } => {
                let vin = self.value(*input);
                let (outer, full, inner) = axis_split(vin.shape(), *axis);
                let len = g.shape()[*axis];
                let mut d = vec![F::zero(); vin.numel()];
                for o in 0..outer {
                    d[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&gd[o * len * inner..][..len * inner]);
                }
                self.accumulate(grads, *input, Tensor::from_parts(vin.shape().to_vec(), d));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.shape(v).to_vec();
                    let len = shape[*axis];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[(o * total + offset) * inner..][..len * inner]);
                        }
                        self.accumulate(grads, v, Tensor::from_parts(shape, d));
                    }
                    offset += len;
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut d = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let dot: F = (0..len).map(|i| gd[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            d[idx(i)] = y[idx(i)] * (gd[idx(i)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::from_parts(out.shape().to_vec(), d));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = self.shape(*logits).to_vec();
                let (n, k) = (shape[0], shape[1]);
                let scale = gd[0] / F::cst(n as f64);
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] = d[r * k + l] - scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, d));
            }
            Op::Conv2d {
                input,
                weight,
                geom,
            } => {
                let (dx, dw) = conv::backward(
                    self.value(*input),
                    self.value(*weight),
                    geom,
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *weight, dw);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                stats,
            } => {
                let (dx, dgamma, dbeta) =
                    batchnorm::backward(self.value(*input), self.value(*gamma), stats, g);
                if self.wants(*input) {
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*gamma) {
                    self.accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, dbeta);
                }
            }
        }
    }
}

fn transpose2<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut d = vec![F::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            d[j * r + i] = src[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], d)
}
