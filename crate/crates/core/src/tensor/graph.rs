//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its value and enough information
//! to run the chain rule. `backward` walks the tape once, newest to oldest,
//! and leaves gradients on the leaves that asked for them. Interior
//! gradients live only for the duration of one `backward` call, so calling
//! it twice accumulates leaf gradients without double-counting.

use std::f64::consts::PI;
use std::fmt;

use super::linalg::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    Exp,
    Log,
    Cos,
    Sin,
    Asin,
    Acos,
    Tanh,
    Sigmoid,
    Sqrt,
    Neg,
    /// `x^p` for a constant exponent.
    Powf(f64),
    Scale(f64),
    AddScalar(f64),
    /// The piecewise angular-margin function
    /// `psi(t) = (-1)^k cos(m t) - 2k` for `t in [k pi/m, (k+1) pi/m]`.
    AngularPsi(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the right operand of a binary op is indexed against the left.
#[derive(Debug)]
enum Broadcast {
    Same,
    Scalar,
    /// `map[i]` is the right-operand index for output index `i`.
    Map(Vec<usize>),
}

impl Broadcast {
    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Map(m) => m[i],
        }
    }
}

/// Backward rule for ops defined outside this module (convolution, pooling, ...).
pub trait BackwardKernel: Send + Sync {
    fn inputs(&self) -> Vec<Var>;

    /// Accumulates input gradients given the output value and its gradient.
    fn backward(&self, graph: &Graph, out: &[f64], out_grad: &[f64], sink: &mut GradSink);
}

enum Op {
    Leaf,
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Sum {
        x: Var,
        scale: f64,
    },
    SumAxis {
        x: Var,
        rows: usize,
        cols: usize,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: Vec<usize>,
    },
    LogSoftmax {
        x: Var,
        cols: usize,
    },
    Pick {
        x: Var,
        cols: usize,
        indices: Vec<usize>,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Kernel(Box<dyn BackwardKernel>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Unary { x, .. }
            | Op::Sum { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Reshape { x }
            | Op::LogSoftmax { x, .. }
            | Op::Pick { x, .. }
            | Op::Clamp { x, .. } => vec![*x],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Kernel(k) => k.inputs(),
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    finite: bool,
}

/// Per-call gradient buffers handed to backward rules.
pub struct GradSink {
    bufs: Vec<Option<Vec<f64>>>,
    needs: Vec<bool>,
    lens: Vec<usize>,
}

impl GradSink {
    /// Gradient buffer for `v`, or `None` when `v` does not need one.
    pub fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.needs[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub fn needs(&self, v: Var) -> bool {
        self.needs[v.0]
    }
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

fn all_finite(xs: &[f64]) -> bool {
    if !cfg!(debug_assertions) {
        return true;
    }
    // v * 0 is 0 for finite v and NaN otherwise; the branch-free fold
    // vectorises, unlike a short-circuiting scan.
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] += c[i] * 0.0;
        }
    }
    acc.iter().chain(tail).all(|v| v.is_finite())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].finite);
        let finite = if inputs_finite {
            let ok = all_finite(&value);
            debug_assert!(ok, "non-finite output from finite inputs");
            ok
        } else {
            false
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            finite,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are kept only when `requires_grad` is set.
    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "leaf shape {shape:?} does not hold {} values",
                value.len()
            )));
        }
        let finite = all_finite(&value);
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
            finite,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copies a tensor onto the tape, honouring its `requires_grad` flag.
    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
            .expect("tensor invariants guarantee a valid leaf")
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.leaf(vec![1], vec![v], false).unwrap()
    }

    /// Records a kernel-defined op. Used by the layer kernels in `nn`.
    pub fn push_kernel(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        kernel: Box<dyn BackwardKernel>,
    ) -> Var {
        self.push(shape, value, Op::Kernel(kernel))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).unwrap()
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xs = &self.nodes[x.0].value;
        match kind {
            UnaryKind::Asin | UnaryKind::Acos => {
                if let Some(bad) = xs.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                    return Err(Error::Domain(format!(
                        "{kind:?} input {bad} outside [-1, 1]"
                    )));
                }
            }
            UnaryKind::Log => {
                if let Some(bad) = xs.iter().find(|v| **v <= 0.0) {
                    return Err(Error::Domain(format!("log input {bad} is not positive")));
                }
            }
            UnaryKind::Sqrt => {
                if let Some(bad) = xs.iter().find(|v| **v < 0.0) {
                    return Err(Error::Domain(format!("sqrt input {bad} is negative")));
                }
            }
            UnaryKind::AngularPsi(m) => {
                if m == 0 {
                    return Err(Error::Domain("angular margin m must be >= 1".into()));
                }
                if let Some(bad) = xs.iter().find(|v| !(0.0..=PI).contains(*v)) {
                    return Err(Error::Domain(format!("angle {bad} outside [0, pi]")));
                }
            }
            _ => {}
        }
        let out: Vec<f64> = xs.iter().map(|&v| unary_forward(kind, v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, out, Op::Unary { kind, x }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x).unwrap()
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x).unwrap()
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Cos, x).unwrap()
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sin, x).unwrap()
    }
    pub fn asin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Asin, x)
    }
    pub fn acos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Acos, x)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x).unwrap()
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x).unwrap()
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x).unwrap()
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(UnaryKind::Powf(p), x).unwrap()
    }
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(UnaryKind::Scale(s), x).unwrap()
    }
    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(UnaryKind::AddScalar(s), x).unwrap()
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let bcast = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let out: Vec<f64> = match &bcast {
            Broadcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.iter().map(|&x| f(x, bv[0])).collect(),
            Broadcast::Map(m) => av.iter().zip(m).map(|(&x, &j)| f(x, bv[j])).collect(),
        };
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, out, Op::Binary { kind, a, b, bcast }))
    }

    /// `a + b`; `b` may broadcast into `a` (scalar, or right-aligned dims equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    // ---- linear algebra and reductions ---------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul of {sa:?} by {sb:?}: inner dimensions must match"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            false,
            &mut out,
            0.0,
        );
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![1], vec![s], Op::Sum { x, scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let scale = 1.0 / v.len() as f64;
        let s = v.iter().sum::<f64>() * scale;
        self.push(vec![1], vec![s], Op::Sum { x, scale })
    }

    /// Sum of a matrix over `axis` (0: down columns → `[cols]`, 1: along rows → `[rows]`).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 2 || axis > 1 {
            return Err(Error::Dimension(format!(
                "sum_axis({axis}) needs a matrix, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let v = &self.nodes[x.0].value;
        let out = if axis == 0 {
            let mut o = vec![0.0; cols];
            for r in 0..rows {
                for (acc, &e) in o.iter_mut().zip(&v[r * cols..(r + 1) * cols]) {
                    *acc += e;
                }
            }
            o
        } else {
            v.chunks_exact(cols).map(|row| row.iter().sum()).collect()
        };
        let shape = vec![if axis == 0 { cols } else { rows }];
        Ok(self.push(shape, out, Op::SumAxis { x, rows, cols, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.nodes[x.0].value.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.nodes[x.0].shape
            )));
        }
        let value = self.nodes[x.0].value.clone();
        Ok(self.push(shape, value, Op::Reshape { x }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} for {base:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = &self.nodes[p.0].shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat along {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let tail: usize = base[axis + 1..].iter().product();
        let inner: Vec<usize> = parts
            .iter()
            .map(|p| self.nodes[p.0].shape[axis] * tail)
            .collect();
        let total: usize = inner.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&inner) {
                out.extend_from_slice(&self.nodes[p.0].value[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
        ))
    }

    /// Row-wise log-softmax of a matrix, stabilised by subtracting the row max.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "log_softmax needs a matrix, got {shape:?}"
            )));
        }
        let cols = shape[1];
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(shape, out, Op::LogSoftmax { x, cols }))
    }

    /// `out[r] = x[r, indices[r]]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 2 || shape[0] != indices.len() {
            return Err(Error::Dimension(format!(
                "pick of {} indices from {shape:?}",
                indices.len()
            )));
        }
        let cols = shape[1];
        if let Some(bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::Contract(format!("index {bad} out of range 0..{cols}")));
        }
        let v = &self.nodes[x.0].value;
        let out: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| v[r * cols + c])
            .collect();
        Ok(self.push(
            vec![indices.len()],
            out,
            Op::Pick {
                x,
                cols,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, out, Op::Clamp { x, lo, hi })
    }

    // ---- backward ------------------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every leaf that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let n = self.nodes[root.0].value.len();
        if n != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let count = root.0 + 1;
        let mut sink = GradSink {
            bufs: (0..count).map(|_| None).collect(),
            needs: self.nodes[..count].iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes[..count].iter().map(|n| n.value.len()).collect(),
        };
        sink.bufs[root.0] = Some(vec![1.0]);
        for id in (0..count).rev() {
            let Some(gout) = sink.bufs[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                sink.bufs[id] = Some(gout);
                continue;
            }
            self.backward_node(node, &gout, &mut sink);
        }
        for id in 0..count {
            if let (Op::Leaf, Some(g)) = (&self.nodes[id].op, sink.bufs[id].take()) {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node, gout: &[f64], sink: &mut GradSink) {
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let xv = &self.nodes[x.0].value;
                let yv = &node.value;
                if let Some(gx) = sink.slot(*x) {
                    for i in 0..gx.len() {
                        gx[i] += gout[i] * unary_derivative(*kind, xv[i], yv[i]);
                    }
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if let Some(ga) = sink.slot(*a) {
                    for i in 0..ga.len() {
                        let bj = bv[bcast.index(i)];
                        ga[i] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => gout[i],
                            BinaryKind::Mul => gout[i] * bj,
                            BinaryKind::Div => gout[i] / bj,
                        };
                    }
                }
                if let Some(gb) = sink.slot(*b) {
                    for i in 0..gout.len() {
                        let j = bcast.index(i);
                        gb[j] += match kind {
                            BinaryKind::Add => gout[i],
                            BinaryKind::Sub => -gout[i],
                            BinaryKind::Mul => gout[i] * av[i],
                            BinaryKind::Div => -gout[i] * av[i] / (bv[j] * bv[j]),
                        };
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if sink.needs(*a) {
                    let bv = &self.nodes[b.0].value;
                    let ga = sink.slot(*a).unwrap();
                    // dA += dC · Bᵀ
                    gemm(m, n, k, gout, false, bv, true, ga, 1.0);
                }
                if sink.needs(*b) {
                    let av = &self.nodes[a.0].value;
                    let gb = sink.slot(*b).unwrap();
                    // dB += Aᵀ · dC
                    gemm(k, m, n, av, true, gout, false, gb, 1.0);
                }
            }
            Op::Sum { x, scale } => {
                if let Some(gx) = sink.slot(*x) {
                    let g = gout[0] * scale;
                    gx.iter_mut().for_each(|v| *v += g);
                }
            }
            Op::SumAxis { x, rows, cols, axis } => {
                if let Some(gx) = sink.slot(*x) {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[r * cols + c] += if *axis == 0 { gout[c] } else { gout[r] };
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = sink.slot(*x) {
                    gx.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = inner.iter().sum();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(inner) {
                    if let Some(gp) = sink.slot(*p) {
                        for o in 0..*outer {
                            let src = &gout[o * total + offset..o * total + offset + w];
                            for (a, b) in gp[o * w..(o + 1) * w].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::LogSoftmax { x, cols } => {
                if let Some(gx) = sink.slot(*x) {
                    for (r, row) in node.value.chunks_exact(*cols).enumerate() {
                        let g = &gout[r * cols..(r + 1) * cols];
                        let gsum: f64 = g.iter().sum();
                        for c in 0..*cols {
                            gx[r * cols + c] += g[c] - row[c].exp() * gsum;
                        }
                    }
                }
            }
            Op::Pick { x, cols, indices } => {
                if let Some(gx) = sink.slot(*x) {
                    for (r, &c) in indices.iter().enumerate() {
                        gx[r * cols + c] += gout[r];
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.nodes[x.0].value;
                if let Some(gx) = sink.slot(*x) {
                    for i in 0..gx.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += gout[i];
                        }
                    }
                }
            }
            Op::Kernel(k) => k.backward(self, &node.value, gout, sink),
        }
    }
}

fn psi_interval(m: u32, theta: f64) -> u32 {
    let k = (theta * m as f64 / PI).floor() as i64;
    k.clamp(0, m as i64 - 1) as u32
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Asin => x.asin(),
        UnaryKind::Acos => x.acos(),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Neg => -x,
        UnaryKind::Powf(p) => x.powf(p),
        UnaryKind::Scale(s) => x * s,
        UnaryKind::AddScalar(s) => x + s,
        UnaryKind::AngularPsi(m) => {
            let k = psi_interval(m, x);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (m as f64 * x).cos() - 2.0 * k as f64
        }
    }
}

/// dy/dx given input `x` and output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Cos => -x.sin(),
        UnaryKind::Sin => x.cos(),
        UnaryKind::Asin => 1.0 / (1.0 - x * x).sqrt(),
        UnaryKind::Acos => -1.0 / (1.0 - x * x).sqrt(),
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Sqrt => 0.5 / y,
        UnaryKind::Neg => -1.0,
        UnaryKind::Powf(p) => p * x.powf(p - 1.0),
        UnaryKind::Scale(s) => s,
        UnaryKind::AddScalar(_) => 1.0,
        UnaryKind::AngularPsi(m) => {
            let k = psi_interval(m, x);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            -sign * m as f64 * (m as f64 * x).sin()
        }
    }
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.iter().product::<usize>() == 1 {
        return Ok(Broadcast::Scalar);
    }
    let err = || {
        Error::Dimension(format!(
            "cannot broadcast {b:?} into {a:?} (trailing dims must match or be 1)"
        ))
    };
    if b.len() > a.len() {
        return Err(err());
    }
    let off = a.len() - b.len();
    for (i, &d) in b.iter().enumerate() {
        if d != 1 && d != a[off + i] {
            return Err(err());
        }
    }
    // Right-operand strides, zero along broadcast dims.
    let mut strides = vec![0usize; a.len()];
    let mut s = 1;
    for i in (0..b.len()).rev() {
        strides[off + i] = if b[i] == 1 { 0 } else { s };
        s *= b[i];
    }
    let n: usize = a.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            if idx[d] < a[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Broadcast::Map(map))
}
