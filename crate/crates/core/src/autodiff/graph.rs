//! Define-by-run tape. Every operation on a [`Var`] evaluates eagerly and
//! appends a node; node ids are therefore already in topological order and
//! [`Graph::backward`] walks them from the loss back to index 0.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::tensor::{broadcast_map, numel, Tensor};
use crate::dsp;
use crate::error::{Error, Result};

type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId, Option<Vec<usize>>),
    Sub(NodeId, NodeId, Option<Vec<usize>>),
    Mul(NodeId, NodeId, Option<Vec<usize>>),
    Div(NodeId, NodeId, Option<Vec<usize>>),
    Neg(NodeId),
    Sin(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    CumSum(NodeId),
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Conv1d(Box<ConvCtx>),
    Upsample { x: NodeId, factor: usize },
    Stft(Box<StftCtx>),
    Sum(NodeId),
    Mean(NodeId),
    L2Norm(NodeId),
    Dropout { x: NodeId, mask: Vec<f64> },
    Slice { x: NodeId, axis: usize, start: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    ScaleShift { x: NodeId, scale: f64 },
    Reshape(NodeId),
    CausalConv { signal: NodeId, kernel: NodeId },
}

#[derive(Debug)]
struct ConvCtx {
    input: NodeId,
    weight: NodeId,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    causal: bool,
    t_in: usize,
    t_out: usize,
    cols: Vec<f64>,
}

#[derive(Debug)]
struct StftCtx {
    x: NodeId,
    window: usize,
    hop: usize,
    frames: usize,
    spectra: Vec<Complex64>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A computation tape confined to one thread.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, shape {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires grad.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), backward_done: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn reset_backward(&self) {
        self.backward_done.set(false);
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let same = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { inputs, axis }, rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
        }

        let out = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Some(Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn accumulate_mapped(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    map: &Option<Vec<usize>>,
    contrib: impl Fn(usize) -> f64,
) {
    accumulate(nodes, grads, id, |dst| match map {
        None => dst.iter_mut().enumerate().for_each(|(i, d)| *d += contrib(i)),
        Some(map) => map.iter().enumerate().for_each(|(i, &j)| dst[j] += contrib(i)),
    });
}

fn bval(b: &[f64], map: &Option<Vec<usize>>, i: usize) -> f64 {
    match map {
        None => b[i],
        Some(m) => b[m[i]],
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: NodeId| nodes[id].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b, map) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate_mapped(nodes, grads, *b, map, |i| g[i]);
        }
        Op::Sub(a, b, map) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate_mapped(nodes, grads, *b, map, |i| -g[i]);
        }
        Op::Mul(a, b, map) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * bval(bv, map, i))
            });
            accumulate_mapped(nodes, grads, *b, map, |i| g[i] * av[i]);
        }
        Op::Div(a, b, map) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] / bval(bv, map, i))
            });
            accumulate_mapped(nodes, grads, *b, map, |i| {
                let bi = bval(bv, map, i);
                -g[i] * av[i] / (bi * bi)
            });
        }
        Op::Neg(x) => accumulate(nodes, grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)),
        Op::Sin(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * xv[i].cos()))
        }
        Op::Exp(x) => {
            let y = node.value.data();
            accumulate(nodes, grads, *x, |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * y[i]))
        }
        Op::Log(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] / xv[i]))
        }
        Op::Abs(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| {
                d.iter_mut().enumerate().for_each(|(i, d)| {
                    if xv[i] > 0.0 {
                        *d += g[i]
                    } else if xv[i] < 0.0 {
                        *d -= g[i]
                    }
                })
            })
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            accumulate(nodes, grads, *x, |d| {
                d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * y[i] * (1.0 - y[i]))
            })
        }
        Op::Relu(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| {
                d.iter_mut().enumerate().filter(|(i, _)| xv[*i] > 0.0).for_each(|(i, d)| *d += g[i])
            })
        }
        Op::CumSum(x) => {
            let row = *node.value.shape().last().unwrap();
            accumulate(nodes, grads, *x, |d| {
                for (dr, gr) in d.chunks_mut(row).zip(g.chunks(row)) {
                    let mut acc = 0.0;
                    for j in (0..row).rev() {
                        acc += gr[j];
                        dr[j] += acc;
                    }
                }
            })
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                dsp::gemm(m, n, k, g, (n as isize, 1), bv, (1, n as isize), d, 1.0)
            });
            accumulate(nodes, grads, *b, |d| {
                dsp::gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), d, 1.0)
            });
        }
        Op::Conv1d(ctx) => {
            let ck = ctx.c_in * ctx.kernel;
            let t_out = ctx.t_out as isize;
            accumulate(nodes, grads, ctx.weight, |d| {
                dsp::gemm(ctx.c_out, ctx.t_out, ck, g, (t_out, 1), &ctx.cols, (1, t_out), d, 1.0)
            });
            if nodes[ctx.input].requires_grad {
                let w = val(ctx.weight);
                let mut gcols = vec![0.0; ck * ctx.t_out];
                dsp::gemm(ck, ctx.c_out, ctx.t_out, w, (1, ck as isize), g, (t_out, 1), &mut gcols, 0.0);
                accumulate(nodes, grads, ctx.input, |d| col2im(ctx, &gcols, d));
            }
        }
        Op::Upsample { x, factor } => {
            let out_row = *node.value.shape().last().unwrap();
            let t = out_row / factor;
            accumulate(nodes, grads, *x, |d| {
                for (dr, gr) in d.chunks_mut(t).zip(g.chunks(out_row)) {
                    for (n, &gn) in gr.iter().enumerate() {
                        let (i0, frac) = (n / factor, (n % factor) as f64 / *factor as f64);
                        let i1 = (i0 + 1).min(t - 1);
                        dr[i0] += (1.0 - frac) * gn;
                        dr[i1] += frac * gn;
                    }
                }
            })
        }
        Op::Stft(ctx) => {
            let window = dsp::hann(ctx.window);
            let bins = ctx.window / 2 + 1;
            accumulate(nodes, grads, ctx.x, |d| {
                let mut buf = vec![Complex64::default(); ctx.window];
                for f in 0..ctx.frames {
                    buf.iter_mut().for_each(|c| *c = Complex64::default());
                    let mut any = false;
                    for k in 0..bins {
                        let xk = ctx.spectra[f * bins + k];
                        let mag = xk.norm();
                        let gk = g[f * bins + k];
                        if mag > 0.0 && gk != 0.0 {
                            buf[k] = xk.conj() * (gk / mag);
                            any = true;
                        }
                    }
                    if !any {
                        continue;
                    }
                    dsp::fft(&mut buf);
                    let start = f * ctx.hop;
                    for n in 0..ctx.window {
                        d[start + n] += window[n] * buf[n].re;
                    }
                }
            })
        }
        Op::Sum(x) => accumulate(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(x) => {
            let n = nodes[*x].value.numel() as f64;
            accumulate(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
        }
        Op::L2Norm(x) => {
            let xv = val(*x);
            let row = *nodes[*x].value.shape().last().unwrap();
            let y = node.value.data();
            accumulate(nodes, grads, *x, |d| {
                for (r, (dr, xr)) in d.chunks_mut(row).zip(xv.chunks(row)).enumerate() {
                    if y[r] > 0.0 {
                        let s = g[r] / y[r];
                        dr.iter_mut().zip(xr).for_each(|(d, x)| *d += s * x);
                    }
                }
            })
        }
        Op::Dropout { x, mask } => {
            accumulate(nodes, grads, *x, |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * mask[i]))
        }
        Op::Slice { x, axis, start } => {
            let in_shape = nodes[*x].value.shape();
            let out_shape = node.value.shape();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let (in_len, out_len) = (in_shape[*axis] * inner, out_shape[*axis] * inner);
            accumulate(nodes, grads, *x, |d| {
                for (dr, gr) in d.chunks_mut(in_len).zip(g.chunks(out_len)) {
                    dr[start * inner..start * inner + out_len].iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                }
            })
        }
        Op::Concat { inputs, axis } => {
            let out_shape = node.value.shape();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let out_len = out_shape[*axis] * inner;
            let mut offset = 0;
            for &id in inputs {
                let len = nodes[id].value.shape()[*axis] * inner;
                accumulate(nodes, grads, id, |d| {
                    for (dr, gr) in d.chunks_mut(len).zip(g.chunks(out_len)) {
                        dr.iter_mut().zip(&gr[offset..offset + len]).for_each(|(d, g)| *d += g);
                    }
                });
                offset += len;
            }
        }
        Op::ScaleShift { x, scale } => {
            accumulate(nodes, grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += scale * g))
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
        Op::CausalConv { signal, kernel } => {
            let (sv, kv) = (val(*signal), val(*kernel));
            if nodes[*signal].requires_grad {
                let gs = dsp::fft_correlate(kv, g, sv.len());
                accumulate(nodes, grads, *signal, |d| d.iter_mut().zip(&gs).for_each(|(d, g)| *d += g));
            }
            if nodes[*kernel].requires_grad {
                let gk = dsp::fft_correlate(sv, g, kv.len());
                accumulate(nodes, grads, *kernel, |d| d.iter_mut().zip(&gk).for_each(|(d, g)| *d += g));
            }
        }
    }
}

fn conv_source(ctx_kernel: usize, dilation: usize, causal: bool, t: usize, kk: usize) -> Option<usize> {
    let pad = if causal { (ctx_kernel - 1) * dilation } else { 0 };
    (t + kk * dilation).checked_sub(pad)
}

fn col2im(ctx: &ConvCtx, gcols: &[f64], d: &mut [f64]) {
    for ci in 0..ctx.c_in {
        for kk in 0..ctx.kernel {
            let row = &gcols[(ci * ctx.kernel + kk) * ctx.t_out..][..ctx.t_out];
            let dst = &mut d[ci * ctx.t_in..][..ctx.t_in];
            for (t, &v) in row.iter().enumerate() {
                if let Some(s) = conv_source(ctx.kernel, ctx.dilation, ctx.causal, t, kk) {
                    dst[s] += v;
                }
            }
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs_grad(self.id)
    }

    fn same_graph(&self, other: &Var<'_>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::domain(op, "operands belong to different graphs"))
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("unary shape");
        self.graph.push(t, op, self.requires_grad())
    }

    fn binary(
        &self,
        other: Var<'g>,
        op: &'static str,
        make: impl FnOnce(NodeId, NodeId, Option<Vec<usize>>) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>> {
        self.same_graph(&other, op)?;
        let (a, b) = (self.value(), other.value());
        let map = broadcast_map(op, a.shape(), b.shape())?;
        let data = a.data().iter().enumerate().map(|(i, &x)| f(x, bval(b.data(), &map, i))).collect();
        let t = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(t, make(self.id, other.id, map), rg))
    }

    /// Element-wise sum; `other` may broadcast into `self` along unit dimensions.
    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'g> {
        self.unary(Op::Neg(self.id), |v| -v)
    }

    pub fn sin(&self) -> Var<'g> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var<'g>> {
        let x = self.value();
        if let Some(v) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::domain("log", format!("non-positive input {v}")));
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    pub fn abs(&self) -> Var<'g> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |v| if v < 0.0 { 0.0 } else { v })
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn scale_shift(&self, scale: f64, shift: f64) -> Var<'g> {
        self.unary(Op::ScaleShift { x: self.id, scale }, |v| scale * v + shift)
    }

    /// Inclusive running sum along the last axis.
    pub fn cumsum(&self) -> Var<'g> {
        let x = self.value();
        let row = *x.shape().last().unwrap();
        let mut data = x.data().to_vec();
        for r in data.chunks_mut(row) {
            let mut acc = 0.0;
            for v in r {
                acc += *v;
                *v = acc;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).expect("cumsum shape");
        self.graph.push(t, Op::CumSum(self.id), self.requires_grad())
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other, "matmul")?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        dsp::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), &mut out, 0.0);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: self.id, b: other.id, m, k, n }, rg))
    }

    /// Dilated 1-D convolution of a `[c_in, T]` input with a `[c_out, c_in·kernel]`
    /// weight laid out as `(channel, tap)` pairs. Causal mode left-pads by
    /// `(kernel − 1)·dilation` zeros and keeps length `T`; otherwise the output
    /// only covers fully overlapping positions.
    pub fn conv1d(&self, weight: Var<'g>, kernel: usize, dilation: usize, causal: bool) -> Result<Var<'g>> {
        self.same_graph(&weight, "conv1d")?;
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape(), w.shape());
        if kernel == 0 || dilation == 0 {
            return Err(Error::shape("conv1d", "kernel and dilation must be positive"));
        }
        if sx.len() != 2 || sw.len() != 2 || sw[1] != sx[0] * kernel {
            return Err(Error::shape("conv1d", format!("input {sx:?}, weight {sw:?}, kernel {kernel}")));
        }
        let (c_in, t_in, c_out) = (sx[0], sx[1], sw[0]);
        let span = (kernel - 1) * dilation;
        let t_out = if causal {
            t_in
        } else if t_in > span {
            t_in - span
        } else {
            return Err(Error::shape("conv1d", format!("input length {t_in} shorter than span {}", span + 1)));
        };
        let ck = c_in * kernel;
        let mut cols = vec![0.0; ck * t_out];
        for ci in 0..c_in {
            let src = &x.data()[ci * t_in..][..t_in];
            for kk in 0..kernel {
                let row = &mut cols[(ci * kernel + kk) * t_out..][..t_out];
                for (t, r) in row.iter_mut().enumerate() {
                    if let Some(s) = conv_source(kernel, dilation, causal, t, kk) {
                        *r = src[s];
                    }
                }
            }
        }
        let mut out = vec![0.0; c_out * t_out];
        dsp::gemm(c_out, ck, t_out, w.data(), (ck as isize, 1), &cols, (t_out as isize, 1), &mut out, 0.0);
        let ctx = ConvCtx { input: self.id, weight: weight.id, c_in, c_out, kernel, dilation, causal, t_in, t_out, cols };
        let rg = self.requires_grad() || weight.requires_grad();
        Ok(self.graph.push(Tensor::new(vec![c_out, t_out], out)?, Op::Conv1d(Box::new(ctx)), rg))
    }

    /// Linear interpolation along the last axis by an integer factor. Frame `t`
    /// lands on sample `t·factor`; samples past the last frame hold its value.
    pub fn upsample(&self, factor: usize) -> Result<Var<'g>> {
        if factor == 0 {
            return Err(Error::shape("linear_upsample", "factor must be positive"));
        }
        let x = self.value();
        let t = *x.shape().last().unwrap();
        let mut data = Vec::with_capacity(x.numel() * factor);
        for row in x.data().chunks(t) {
            for n in 0..t * factor {
                let (i0, frac) = (n / factor, (n % factor) as f64 / factor as f64);
                let i1 = (i0 + 1).min(t - 1);
                data.push((1.0 - frac) * row[i0] + frac * row[i1]);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = t * factor;
        Ok(self.graph.push(Tensor::new(shape, data)?, Op::Upsample { x: self.id, factor }, self.requires_grad()))
    }

    /// Magnitude of the Hann-windowed, non-centered STFT of a 1-D signal
    /// (shape `[L]` or `[1, L]`). Output is `[frames, window/2 + 1]`.
    pub fn stft_magnitude(&self, window: usize, hop: usize) -> Result<Var<'g>> {
        let x = self.value();
        let s = x.shape();
        let is_signal = s.len() == 1 || (s.len() == 2 && s[0] == 1);
        if !is_signal {
            return Err(Error::shape("stft_magnitude", format!("expected a 1-D signal, got {s:?}")));
        }
        if window < 2 || hop == 0 {
            return Err(Error::shape("stft_magnitude", format!("window {window}, hop {hop}")));
        }
        let l = x.numel();
        if l < window {
            return Err(Error::shape("stft_magnitude", format!("signal length {l} shorter than window {window}")));
        }
        let frames = (l - window) / hop + 1;
        let bins = window / 2 + 1;
        let win = dsp::hann(window);
        let mut spectra = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::default(); window];
        for f in 0..frames {
            let seg = &x.data()[f * hop..f * hop + window];
            for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&win) {
                *b = Complex64::new(v * w, 0.0);
            }
            dsp::fft(&mut buf);
            spectra.extend_from_slice(&buf[..bins]);
        }
        let mags = spectra.iter().map(|c| c.norm()).collect();
        let ctx = StftCtx { x: self.id, window, hop, frames, spectra };
        Ok(self.graph.push(Tensor::new(vec![frames, bins], mags)?, Op::Stft(Box::new(ctx)), self.requires_grad()))
    }

    pub fn sum(&self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Var<'g> {
        let x = self.value();
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.graph.push(Tensor::scalar(s), Op::Mean(self.id), self.requires_grad())
    }

    /// Euclidean norm along the last axis, keeping it as a unit dimension.
    pub fn l2_norm(&self) -> Var<'g> {
        let x = self.value();
        let row = *x.shape().last().unwrap();
        let data = x.data().chunks(row).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let t = Tensor::new(shape, data).expect("l2_norm shape");
        self.graph.push(t, Op::L2Norm(self.id), self.requires_grad())
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1/(1−p)`. The mask is drawn from a generator seeded by `seed`.
    pub fn dropout(&self, p: f64, seed: u64) -> Result<Var<'g>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::domain("dropout", format!("p = {p} not in [0, 1)")));
        }
        let x = self.value();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.graph.push(t, Op::Dropout { x: self.id, mask }, self.requires_grad()))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'g>> {
        let x = self.value();
        let s = x.shape();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let inner: usize = s[axis + 1..].iter().product();
        let in_len = s[axis] * inner;
        let mut shape = s.to_vec();
        shape[axis] = end - start;
        let mut data = Vec::with_capacity(numel(&shape));
        for chunk in x.data().chunks(in_len) {
            data.extend_from_slice(&chunk[start * inner..end * inner]);
        }
        Ok(self.graph.push(Tensor::new(shape, data)?, Op::Slice { x: self.id, axis, start }, self.requires_grad()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        let t = Tensor::new(shape.to_vec(), x.data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} → {shape:?}", x.shape())))?;
        Ok(self.graph.push(t, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Causal linear convolution of this signal with `kernel`, truncated to the
    /// signal length; computed through zero-padded FFTs. Both operands are
    /// read as flat sequences and the result keeps this signal's shape.
    pub fn causal_convolve(&self, kernel: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&kernel, "causal_convolve")?;
        let (x, h) = (self.value(), kernel.value());
        let out = dsp::fft_convolve(x.data(), h.data(), x.numel());
        let rg = self.requires_grad() || kernel.requires_grad();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.graph.push(t, Op::CausalConv { signal: self.id, kernel: kernel.id }, rg))
    }
}
