//! Tape of tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably and records every
//! operation eagerly: the forward value of each node is computed when the
//! node is pushed, so nodes are topologically ordered by construction.
//! [`Graph::backward`] walks the tape in reverse and accumulates
//! `∂output/∂θ` into a [`Gradients`] buffer. Parameter leaves never copy
//! their value onto the tape, and gradients flowing into them are written
//! straight into the gradient buffer (an embedding lookup only touches the
//! looked-up row).

use std::f64::consts::PI;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{self, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln { input: NodeId, floor: f64 },
    Softmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    Reshape(NodeId),
    Sum(NodeId),
    MeanRows(NodeId),
    Pick(NodeId, usize),
    MaskRight { pre: NodeId, tangent: NodeId },
    BceLogits { logit: NodeId, label: f64 },
    TimeEncode {
        intervals: Vec<f64>,
        log_period: NodeId,
        amplitude: NodeId,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Ln { .. } => "ln",
            Op::Softmax(_) => "softmax",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Gather(..) => "gather",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_rows",
            Op::Pick(..) => "pick",
            Op::MaskRight { .. } => "mask_right",
            Op::BceLogits { .. } => "bce_logits",
            Op::TimeEncode { .. } => "time_encode",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match self.nodes[id.0].op {
            Op::Param(pid) => self.params.value(pid),
            _ => &self.nodes[id.0].value,
        }
    }

    /// Index of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push(Op::Param(id), Tensor::empty());
        self.param_nodes[id.0] = Some(n);
        n
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, n) = self.dims(a);
        let (n2, m) = self.dims(b);
        assert_eq!(n, n2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; r * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, r, n, m);
        self.push(Op::MatMul(a, b), Tensor::matrix(r, m, out))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, n) = self.dims(a);
        let (m, n2) = self.dims(b);
        assert_eq!(n, n2, "matmul_bt inner dimension mismatch");
        let mut out = vec![0.0; r * m];
        matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, r, n, m);
        self.push(Op::MatMulBt(a, b), Tensor::matrix(r, m, out))
    }

    fn zip_same(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.len(), vb.len(), "elementwise shape mismatch in {}", op.name());
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.push(op, Tensor::new(shape, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the single row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let vr = self.value(row);
        assert_eq!(vr.len(), c, "add_row width mismatch");
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            for (d, &b) in data[i * c..(i + 1) * c].iter_mut().zip(vr.data()) {
                *d += b;
            }
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Op::AddRow(a, row), Tensor::new(shape, data))
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push(op, Tensor::new(shape, data))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Exp(a), f64::exp)
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.map(a, Op::Ln { input: a, floor }, move |x| x.max(floor).ln())
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            tensor::softmax_in_place(&mut data[i * c..(i + 1) * c]);
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Softmax(a), Tensor::new(shape, data))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row(i));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(rows, total, data))
    }

    /// Vertical concatenation of tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::matrix(rows, cols, data))
    }

    /// Row lookup: the result stacks `a[rows[0]], a[rows[1]], …`.
    pub fn gather(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(a);
        let c = v.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(v.row(r));
        }
        self.push(Op::Gather(a, rows.to_vec()), Tensor::matrix(rows.len(), c, data))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(a);
        let t = Tensor::new(shape.to_vec(), v.data().to_vec());
        self.push(Op::Reshape(a), t)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Column means over rows, giving a single row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(Op::MeanRows(a), Tensor::matrix(1, c, out))
    }

    /// The scalar at flat index `index`.
    pub fn pick(&mut self, a: NodeId, index: usize) -> NodeId {
        let v = self.value(a).data()[index];
        self.push(Op::Pick(a, index), Tensor::scalar(v))
    }

    /// Forward-mode tangent through a ReLU: passes `tangent[i]` where the unit
    /// is active to the right of the current point (`pre > 0`, or `pre == 0`
    /// with a positive tangent) and zero elsewhere. The mask is piecewise
    /// constant, so no gradient flows into `pre`.
    pub fn mask_right(&mut self, pre: NodeId, tangent: NodeId) -> NodeId {
        let vp = self.value(pre);
        let vt = self.value(tangent);
        assert_eq!(vp.len(), vt.len(), "mask_right shape mismatch");
        let data = vp
            .data()
            .iter()
            .zip(vt.data())
            .map(|(&z, &t)| if relu_active_right(z, t) { t } else { 0.0 })
            .collect();
        let shape = vt.shape().to_vec();
        self.push(Op::MaskRight { pre, tangent }, Tensor::new(shape, data))
    }

    /// Binary cross entropy of `σ(logit)` against `label`, computed from the
    /// logit for stability.
    pub fn bce_logits(&mut self, logit: NodeId, label: f64) -> NodeId {
        let z = self.value(logit).item();
        let loss = softplus(z) - label * z;
        self.push(Op::BceLogits { logit, label }, Tensor::scalar(loss))
    }

    /// Functional time encoding of several intervals at once.
    ///
    /// `log_period` holds `ln ω_f` for each of the `k` frequencies and
    /// `amplitude` is `k × (J+1)` with `amplitude[f][j] = √c_j`. Output row `i`
    /// is the concatenation over frequencies of
    /// `[a_0, a_1 cos(πt/ω), a_1 sin(πt/ω), …, a_J cos(Jπt/ω), a_J sin(Jπt/ω)]`.
    pub fn time_encode(&mut self, intervals: &[f64], log_period: NodeId, amplitude: NodeId) -> NodeId {
        let lp = self.value(log_period);
        let amp = self.value(amplitude);
        let k = lp.len();
        assert_eq!(amp.rows(), k, "one amplitude row per frequency");
        let harmonics = amp.cols() - 1;
        let block = 2 * harmonics + 1;
        let mut data = Vec::with_capacity(intervals.len() * k * block);
        for &t in intervals {
            for f in 0..k {
                let omega = lp.data()[f].exp();
                let a = amp.row(f);
                data.push(a[0]);
                for j in 1..=harmonics {
                    let arg = j as f64 * PI * t / omega;
                    data.push(a[j] * arg.cos());
                    data.push(a[j] * arg.sin());
                }
            }
        }
        let t = Tensor::matrix(intervals.len(), k * block, data);
        self.push(
            Op::TimeEncode {
                intervals: intervals.to_vec(),
                log_period,
                amplitude,
            },
            t,
        )
    }

    /// Convenience dense layer `x · w + b`.
    pub fn dense(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let wn = self.param(w);
        let y = self.matmul(x, wn);
        match b {
            Some(b) => {
                let bn = self.param(b);
                self.add_row(y, bn)
            }
            None => y,
        }
    }

    /// Accumulates `∂output/∂θ` for every parameter reachable from `output`.
    pub fn backward(&self, output: NodeId, grads: &mut Gradients) -> Result<()> {
        self.backward_scaled(output, 1.0, grads)
    }

    /// Like [`Graph::backward`] but seeds the output gradient with `seed`.
    pub fn backward_scaled(&self, output: NodeId, seed: f64, grads: &mut Gradients) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        if let Some((node, op)) = self.first_non_finite() {
            return Err(Error::NumericFault { node, op });
        }
        let mut state = Backward {
            graph: self,
            node_grads: vec![None; output.0 + 1],
            grads,
        };
        state.node_grads[output.0] = Some(vec![seed]);
        for id in (0..=output.0).rev() {
            let Some(g) = state.node_grads[id].take() else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFault {
                    node: id,
                    op: self.nodes[id].op.name(),
                });
            }
            state.propagate(NodeId(id), &g);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn relu_active_right(pre: f64, tangent: f64) -> bool {
    pre > 0.0 || (pre == 0.0 && tangent > 0.0)
}

struct Backward<'g, 'p, 'b> {
    graph: &'g Graph<'p>,
    node_grads: Vec<Option<Vec<f64>>>,
    grads: &'b mut Gradients,
}

impl Backward<'_, '_, '_> {
    /// Mutable gradient buffer for `id`, allocated on first use.
    fn buf(&mut self, id: NodeId) -> &mut [f64] {
        if let Op::Param(pid) = self.graph.nodes[id.0].op {
            return self.grads.get_mut(pid).data_mut();
        }
        let len = self.graph.value(id).len();
        self.node_grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn accumulate(&mut self, id: NodeId, contribution: impl Iterator<Item = f64>) {
        for (b, c) in self.buf(id).iter_mut().zip(contribution) {
            *b += c;
        }
    }

    fn propagate(&mut self, id: NodeId, g: &[f64]) {
        let graph = self.graph;
        let out = graph.value(id);
        match &graph.nodes[id.0].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (r, n) = graph.dims(a);
                let m = graph.value(b).cols();
                let vb = graph.value(b).data();
                matmul_bt_acc(g, vb, self.buf(a), r, m, n);
                let va = graph.value(a).data();
                matmul_at_acc(va, g, self.buf(b), r, n, m);
            }
            Op::MatMulBt(a, b) => {
                let (a, b) = (*a, *b);
                let (r, n) = graph.dims(a);
                let m = graph.value(b).rows();
                let vb = graph.value(b).data();
                matmul_acc(g, vb, self.buf(a), r, m, n);
                let va = graph.value(a).data();
                matmul_at_acc(g, va, self.buf(b), r, m, n);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.iter().copied());
                self.accumulate(b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.iter().copied());
                self.accumulate(b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let vb = graph.value(b).data();
                self.accumulate(a, g.iter().zip(vb).map(|(g, y)| g * y));
                let va = graph.value(a).data();
                self.accumulate(b, g.iter().zip(va).map(|(g, x)| g * x));
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                self.accumulate(a, g.iter().copied());
                let c = out.cols();
                let buf = self.buf(row);
                for chunk in g.chunks(c) {
                    for (b, &v) in buf.iter_mut().zip(chunk) {
                        *b += v;
                    }
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.accumulate(*a, g.iter().map(|v| v * f));
            }
            Op::Relu(a) => {
                let va = graph.value(*a).data();
                self.accumulate(*a, g.iter().zip(va).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.accumulate(*a, g.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = out.data();
                self.accumulate(*a, g.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)));
            }
            Op::Exp(a) => {
                let y = out.data();
                self.accumulate(*a, g.iter().zip(y).map(|(g, &e)| g * e));
            }
            Op::Ln { input, floor } => {
                let floor = *floor;
                let va = graph.value(*input).data();
                self.accumulate(
                    *input,
                    g.iter().zip(va).map(|(g, &x)| if x > floor { g / x } else { 0.0 }),
                );
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let inner = tensor::dot(yr, gr);
                    for ((d, &s), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                        *d = s * (gv - inner);
                    }
                }
                self.accumulate(*a, dx.into_iter());
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = graph.value(p).cols();
                    let buf = self.buf(p);
                    for (i, row) in buf.chunks_mut(w).enumerate() {
                        let src = &g[i * total + offset..i * total + offset + w];
                        for (b, &v) in row.iter_mut().zip(src) {
                            *b += v;
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = graph.value(p).len();
                    self.accumulate(p, g[offset..offset + len].iter().copied());
                    offset += len;
                }
            }
            Op::Gather(a, rows) => {
                let c = out.cols();
                let buf = self.buf(*a);
                for (i, &r) in rows.iter().enumerate() {
                    for (b, &v) in buf[r * c..(r + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                        *b += v;
                    }
                }
            }
            Op::Reshape(a) => self.accumulate(*a, g.iter().copied()),
            Op::Sum(a) => {
                let s = g[0];
                let len = graph.value(*a).len();
                self.accumulate(*a, std::iter::repeat_n(s, len));
            }
            Op::MeanRows(a) => {
                let (r, c) = graph.dims(*a);
                let inv = 1.0 / r as f64;
                let buf = self.buf(*a);
                for row in buf.chunks_mut(c) {
                    for (b, &v) in row.iter_mut().zip(g) {
                        *b += v * inv;
                    }
                }
            }
            Op::Pick(a, index) => {
                let index = *index;
                self.buf(*a)[index] += g[0];
            }
            Op::MaskRight { pre, tangent } => {
                let vp = graph.value(*pre).data();
                let vt = graph.value(*tangent).data();
                let mask: Vec<f64> = g
                    .iter()
                    .zip(vp.iter().zip(vt))
                    .map(|(g, (&z, &t))| if relu_active_right(z, t) { *g } else { 0.0 })
                    .collect();
                self.accumulate(*tangent, mask.into_iter());
            }
            Op::BceLogits { logit, label } => {
                let z = graph.value(*logit).item();
                let d = g[0] * (sigmoid(z) - label);
                self.buf(*logit)[0] += d;
            }
            Op::TimeEncode {
                intervals,
                log_period,
                amplitude,
            } => {
                let (log_period, amplitude) = (*log_period, *amplitude);
                let lp = graph.value(log_period).data();
                let amp = graph.value(amplitude);
                let k = lp.len();
                let harmonics = amp.cols() - 1;
                let block = 2 * harmonics + 1;
                let mut d_lp = vec![0.0; k];
                let mut d_amp = vec![0.0; amp.len()];
                for (i, &t) in intervals.iter().enumerate() {
                    for f in 0..k {
                        let omega = lp[f].exp();
                        let base = i * k * block + f * block;
                        let arow = amp.row(f);
                        d_amp[f * (harmonics + 1)] += g[base];
                        for j in 1..=harmonics {
                            let arg = j as f64 * PI * t / omega;
                            let (s, c) = arg.sin_cos();
                            let gc = g[base + 2 * j - 1];
                            let gs = g[base + 2 * j];
                            d_amp[f * (harmonics + 1) + j] += gc * c + gs * s;
                            // ∂arg/∂ln ω = -arg
                            d_lp[f] += arow[j] * arg * (gc * s - gs * c);
                        }
                    }
                }
                self.accumulate(log_period, d_lp.into_iter());
                self.accumulate(amplitude, d_amp.into_iter());
            }
        }
    }
}
