//! Reverse-mode gradient tape.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its parents. Nodes are appended in evaluation order, so the node
//! list is already topologically sorted and `backward` is a single reverse
//! sweep.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

type BackwardFn = dyn Fn(&[f64], &[Rc<Tensor>]) -> Vec<Vec<f64>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Affine {
        x: usize,
        w: usize,
        b: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Relu(usize),
    Softmax {
        x: usize,
        scale: f64,
    },
    Concat {
        parts: Vec<usize>,
        outer: usize,
        inner: Vec<usize>,
    },
    Slice {
        x: usize,
        outer: usize,
        inner_in: usize,
        start: usize,
        len: usize,
    },
    Embed {
        table: usize,
        ids: Vec<usize>,
    },
    RowSelect {
        mask: Vec<bool>,
        a: usize,
        b: usize,
    },
    Scores {
        keys: usize,
        query: usize,
    },
    Mix {
        weights: usize,
        values: usize,
    },
    Stack(Vec<usize>),
    Sum(usize),
    Reshape(usize),
    BceLogits {
        logits: usize,
        targets: Vec<f64>,
        mask: Vec<f64>,
        pos_weight: f64,
    },
    Custom {
        inputs: Vec<usize>,
        backward: Box<BackwardFn>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass. Single-threaded; build a fresh tape per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}

fn softplus(x: f64) -> f64 {
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

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that receives gradients.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Registers an operation whose backward rule is supplied by the caller.
    ///
    /// `backward` receives the output gradient and the input values and must
    /// return one gradient buffer per input.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        backward: impl Fn(&[f64], &[Rc<Tensor>]) -> Vec<Vec<f64>> + 'static,
    ) -> Var<'t> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.push(
            value,
            Op::Custom {
                inputs: ids.clone(),
                backward: Box::new(backward),
            },
            &ids,
        )
    }

    /// Runs the reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::shape("backward", nodes[root.id].value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(nodes.iter())
                .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
                .collect(),
        })
    }
}

/// Adds `f`'s contribution into the gradient buffer of `id`.
fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            acc(nodes, grads, *a, |da| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] += dot(gi, &bv.data()[p * n..(p + 1) * n]);
                    }
                }
            });
            acc(nodes, grads, *b, |db| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        axpy(av.data()[i * k + p], gi, &mut db[p * n..(p + 1) * n]);
                    }
                }
            });
        }
        Op::Affine { x, w, b } => {
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let (rows, inp) = (xv.shape()[0], xv.shape()[1]);
            let outd = wv.shape()[0];
            acc(nodes, grads, *x, |dx| {
                for r in 0..rows {
                    let dxr = &mut dx[r * inp..(r + 1) * inp];
                    for o in 0..outd {
                        let go = g[r * outd + o];
                        if go != 0.0 {
                            axpy(go, &wv.data()[o * inp..(o + 1) * inp], dxr);
                        }
                    }
                }
            });
            acc(nodes, grads, *w, |dw| {
                for r in 0..rows {
                    let xr = &xv.data()[r * inp..(r + 1) * inp];
                    for o in 0..outd {
                        let go = g[r * outd + o];
                        if go != 0.0 {
                            axpy(go, xr, &mut dw[o * inp..(o + 1) * inp]);
                        }
                    }
                }
            });
            acc(nodes, grads, *b, |db| {
                for r in 0..rows {
                    for o in 0..outd {
                        db[o] += g[r * outd + o];
                    }
                }
            });
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) {
                -1.0
            } else {
                1.0
            };
            acc(nodes, grads, *a, |da| reduce_into(da, g, 1.0));
            acc(nodes, grads, *b, |db| reduce_into(db, g, sign));
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            acc(nodes, grads, *a, |da| mul_grad_into(da, g, bv.data()));
            acc(nodes, grads, *b, |db| mul_grad_into(db, g, av.data()));
        }
        Op::Scale(a, c) => acc(nodes, grads, *a, |da| axpy(*c, g, da)),
        Op::AddConst(a) => acc(nodes, grads, *a, |da| axpy(1.0, g, da)),
        Op::Tanh(a) => acc(nodes, grads, *a, |da| {
            for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * (1.0 - y * y);
            }
        }),
        Op::Sigmoid(a) => acc(nodes, grads, *a, |da| {
            for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * y * (1.0 - y);
            }
        }),
        Op::Exp(a) => acc(nodes, grads, *a, |da| {
            for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * y;
            }
        }),
        Op::Relu(a) => {
            let xv = &nodes[*a].value;
            acc(nodes, grads, *a, |da| {
                for ((d, gi), x) in da.iter_mut().zip(g).zip(xv.data()) {
                    if *x > 0.0 {
                        *d += gi;
                    }
                }
            })
        }
        Op::Softmax { x, scale } => {
            let cols = *out.shape().last().unwrap();
            acc(nodes, grads, *x, |dx| {
                for (r, y) in out.data().chunks(cols).enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let s = dot(gr, y);
                    for j in 0..cols {
                        dx[r * cols + j] += y[j] * (gr[j] - s) / scale;
                    }
                }
            })
        }
        Op::Concat {
            parts,
            outer,
            inner,
        } => {
            let total: usize = inner.iter().sum();
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(inner) {
                acc(nodes, grads, p, |dp| {
                    for o in 0..*outer {
                        axpy(
                            1.0,
                            &g[o * total + offset..o * total + offset + w],
                            &mut dp[o * w..(o + 1) * w],
                        );
                    }
                });
                offset += w;
            }
        }
        Op::Slice {
            x,
            outer,
            inner_in,
            start,
            len,
        } => acc(nodes, grads, *x, |dx| {
            for o in 0..*outer {
                axpy(
                    1.0,
                    &g[o * len..(o + 1) * len],
                    &mut dx[o * inner_in + start..o * inner_in + start + len],
                );
            }
        }),
        Op::Embed { table, ids } => {
            let d = out.shape()[1];
            acc(nodes, grads, *table, |dt| {
                for (r, &i) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * d..(r + 1) * d], &mut dt[i * d..(i + 1) * d]);
                }
            })
        }
        Op::RowSelect { mask, a, b } => {
            let w = out.len() / mask.len();
            for (src, take) in [(*a, true), (*b, false)] {
                acc(nodes, grads, src, |ds| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m == take {
                            axpy(1.0, &g[r * w..(r + 1) * w], &mut ds[r * w..(r + 1) * w]);
                        }
                    }
                });
            }
        }
        Op::Scores { keys, query } => {
            let kv = &nodes[*keys].value;
            let qv = &nodes[*query].value;
            let (bsz, n, d) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
            acc(nodes, grads, *keys, |dk| {
                for b in 0..bsz {
                    let q = &qv.data()[b * d..(b + 1) * d];
                    for j in 0..n {
                        let gj = g[b * n + j];
                        let off = (b * n + j) * d;
                        axpy(gj, q, &mut dk[off..off + d]);
                    }
                }
            });
            acc(nodes, grads, *query, |dq| {
                for b in 0..bsz {
                    for j in 0..n {
                        let gj = g[b * n + j];
                        let off = (b * n + j) * d;
                        axpy(gj, &kv.data()[off..off + d], &mut dq[b * d..(b + 1) * d]);
                    }
                }
            });
        }
        Op::Mix { weights, values } => {
            let wv = &nodes[*weights].value;
            let vv = &nodes[*values].value;
            let (bsz, n, d) = (vv.shape()[0], vv.shape()[1], vv.shape()[2]);
            acc(nodes, grads, *weights, |dw| {
                for b in 0..bsz {
                    let gb = &g[b * d..(b + 1) * d];
                    for j in 0..n {
                        let off = (b * n + j) * d;
                        dw[b * n + j] += dot(gb, &vv.data()[off..off + d]);
                    }
                }
            });
            acc(nodes, grads, *values, |dv| {
                for b in 0..bsz {
                    let gb = &g[b * d..(b + 1) * d];
                    for j in 0..n {
                        let off = (b * n + j) * d;
                        axpy(wv.data()[b * n + j], gb, &mut dv[off..off + d]);
                    }
                }
            });
        }
        Op::Stack(parts) => {
            let (bsz, n, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
            for (j, &p) in parts.iter().enumerate() {
                acc(nodes, grads, p, |dp| {
                    for b in 0..bsz {
                        let off = (b * n + j) * d;
                        axpy(1.0, &g[off..off + d], &mut dp[b * d..(b + 1) * d]);
                    }
                });
            }
        }
        Op::Reshape(a) => acc(nodes, grads, *a, |da| axpy(1.0, g, da)),
        Op::Sum(a) => acc(nodes, grads, *a, |da| {
            for d in da.iter_mut() {
                *d += g[0];
            }
        }),
        Op::BceLogits {
            logits,
            targets,
            mask,
            pos_weight,
        } => {
            let xv = &nodes[*logits].value;
            acc(nodes, grads, *logits, |dx| {
                for i in 0..dx.len() {
                    let s = sigmoid(xv.data()[i]);
                    let y = targets[i];
                    dx[i] += g[0] * mask[i] * (pos_weight * y * (s - 1.0) + (1.0 - y) * s);
                }
            })
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<Rc<Tensor>> =
                inputs.iter().map(|&i| Rc::clone(&nodes[i].value)).collect();
            let contributions = backward(g, &vals);
            for (&i, c) in inputs.iter().zip(contributions) {
                acc(nodes, grads, i, |di| axpy(1.0, &c, di));
            }
        }
    }
}

/// Accumulates `sign * g` into a buffer that is either the same size as `g`
/// or a broadcast scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], sign: f64) {
    if dst.len() == g.len() {
        axpy(sign, g, dst);
    } else {
        dst[0] += sign * g.iter().sum::<f64>();
    }
}

fn mul_grad_into(dst: &mut [f64], g: &[f64], other: &[f64]) {
    if dst.len() == g.len() {
        if other.len() == g.len() {
            for ((d, gi), o) in dst.iter_mut().zip(g).zip(other) {
                *d += gi * o;
            }
        } else {
            axpy(other[0], g, dst);
        }
    } else {
        dst[0] += dot(g, other);
    }
}

/// Shape of a broadcast binary op: equal shapes, or one side is a scalar.
fn binary_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(op, a.shape(), b.shape()))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let x = a.data()[0];
        b.data().iter().map(|&y| f(x, y)).collect()
    }
}

// `add`/`sub`/`mul` return `Result`, so the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// A constant copy of this value, cut off from the gradient graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    /// `self [m×k] · other [k×n]`
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k) = a
            .dims2()
            .map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
        let (k2, n) = b
            .dims2()
            .map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
        if k != k2 {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                axpy(
                    a.data()[i * k + p],
                    &b.data()[p * n..(p + 1) * n],
                    &mut out[i * n..(i + 1) * n],
                );
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    /// Applies `W x + b` to every row of `self`.
    ///
    /// `self` is `[rows × in]`, `w` is `[out × in]` and `b` has `out` elements.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let wv = w.value();
        let bv = b.value();
        let (rows, inp) = x
            .dims2()
            .map_err(|_| Error::shape("affine", x.shape(), wv.shape()))?;
        let (outd, win) = wv
            .dims2()
            .map_err(|_| Error::shape("affine", x.shape(), wv.shape()))?;
        if win != inp {
            return Err(Error::shape("affine", x.shape(), wv.shape()));
        }
        if bv.len() != outd {
            return Err(Error::shape("affine", wv.shape(), bv.shape()));
        }
        let mut out = vec![0.0; rows * outd];
        for r in 0..rows {
            let xr = &x.data()[r * inp..(r + 1) * inp];
            for o in 0..outd {
                out[r * outd + o] = dot(xr, &wv.data()[o * inp..(o + 1) * inp]) + bv.data()[o];
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![rows, outd], out),
            Op::Affine {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            &[self.id, w.id, b.id],
        ))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let shape = binary_shape(name, &a, &b)?;
        let data = zip_broadcast(&a, &b, f);
        Ok(self
            .tape
            .push(Tensor::from_parts(shape, data), op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op, &[self.id])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|x| x * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(|x| x + c, Op::AddConst(self.id))
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    /// Row-wise `softmax(x / scale)` over the last axis.
    pub fn softmax_rows(self, scale: f64) -> Result<Var<'t>> {
        self.masked_softmax_rows(scale, None)
    }

    /// Row-wise `softmax(x / scale)` where masked-out entries (`false`) get
    /// weight exactly zero. A row with every entry masked is an error.
    pub fn masked_softmax_rows(self, scale: f64, mask: Option<&[bool]>) -> Result<Var<'t>> {
        if !(scale > 0.0) {
            return Err(Error::Input(format!(
                "softmax scale must be > 0, got {scale}"
            )));
        }
        let x = self.value();
        let cols = *x.shape().last().unwrap();
        if let Some(m) = mask {
            if m.len() != x.len() {
                return Err(Error::shape("masked_softmax", x.shape(), &[m.len()]));
            }
        }
        let mut out = vec![0.0; x.len()];
        for (r, row) in x.data().chunks(cols).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    mx = mx.max(v);
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::AllMasked);
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for j in 0..cols {
                if keep(j) {
                    o[j] = ((row[j] - mx) / scale).exp();
                    z += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Softmax { x: self.id, scale },
            &[self.id],
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.push(x, Op::Reshape(self.id), &[self.id]))
    }

    /// Selects a contiguous range along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.rank();
        if axis >= rank {
            return Err(Error::Axis {
                op: "slice",
                axis,
                rank,
            });
        }
        if len == 0 || start + len > x.shape()[axis] {
            return Err(Error::Input(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                x.shape()
            )));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let tail: usize = x.shape()[axis + 1..].iter().product();
        let inner_in = x.shape()[axis] * tail;
        let (s, l) = (start * tail, len * tail);
        let mut data = Vec::with_capacity(outer * l);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[o * inner_in + s..o * inner_in + s + l]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                x: self.id,
                outer,
                inner_in,
                start: s,
                len: l,
            },
            &[self.id],
        ))
    }

    /// Gathers rows of an embedding table `[vocab × d]`.
    pub fn embed(self, ids: &[usize]) -> Result<Var<'t>> {
        let t = self.value();
        let (vocab, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= vocab {
                return Err(Error::VocabId { id: i, size: vocab });
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embed {
                table: self.id,
                ids: ids.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Row `r` of the result comes from `self` where `mask[r]`, else from `other`.
    pub fn select_rows(self, mask: &[bool], other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() || a.shape()[0] != mask.len() {
            return Err(Error::shape("select_rows", a.shape(), b.shape()));
        }
        let w = a.len() / mask.len();
        let mut data = Vec::with_capacity(a.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { &a } else { &b };
            data.extend_from_slice(&src.data()[r * w..(r + 1) * w]);
        }
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::RowSelect {
                mask: mask.to_vec(),
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    /// Per-item dot products of a query `[B × d]` with keys `[B × N × d]`,
    /// giving scores `[B × N]`. Called on the keys.
    pub fn scores(self, query: Var<'t>) -> Result<Var<'t>> {
        let k = self.value();
        let q = query.value();
        let bad = || Error::shape("scores", k.shape(), q.shape());
        let [bsz, n, d] = k.shape()[..] else {
            return Err(bad());
        };
        if q.shape() != [bsz, d] {
            return Err(bad());
        }
        let mut out = vec![0.0; bsz * n];
        for b in 0..bsz {
            let qb = &q.data()[b * d..(b + 1) * d];
            for j in 0..n {
                let off = (b * n + j) * d;
                out[b * n + j] = dot(&k.data()[off..off + d], qb);
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![bsz, n], out),
            Op::Scores {
                keys: self.id,
                query: query.id,
            },
            &[self.id, query.id],
        ))
    }

    /// Per-item weighted sum of value rows: weights `[B × N]` with values
    /// `[B × N × d]` gives `[B × d]`. Called on the weights.
    pub fn mix(self, values: Var<'t>) -> Result<Var<'t>> {
        let w = self.value();
        let v = values.value();
        let bad = || Error::shape("mix", w.shape(), v.shape());
        let [bsz, n, d] = v.shape()[..] else {
            return Err(bad());
        };
        if w.shape() != [bsz, n] {
            return Err(bad());
        }
        let mut out = vec![0.0; bsz * d];
        for b in 0..bsz {
            let ob = &mut out[b * d..(b + 1) * d];
            for j in 0..n {
                let off = (b * n + j) * d;
                axpy(w.data()[b * n + j], &v.data()[off..off + d], ob);
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![bsz, d], out),
            Op::Mix {
                weights: self.id,
                values: values.id,
            },
            &[self.id, values.id],
        ))
    }

    /// Weighted binary cross-entropy on logits, summed over elements.
    ///
    /// Element `i` contributes `mask[i] * (pos_weight * y * softplus(-x) + (1 - y) * softplus(x))`.
    pub fn bce_with_logits(
        self,
        targets: &[f64],
        mask: &[f64],
        pos_weight: f64,
    ) -> Result<Var<'t>> {
        let x = self.value();
        if targets.len() != x.len() || mask.len() != x.len() {
            return Err(Error::shape("bce_with_logits", x.shape(), &[targets.len()]));
        }
        let total: f64 = (0..x.len())
            .map(|i| {
                let (xi, y) = (x.data()[i], targets[i]);
                mask[i] * (pos_weight * y * softplus(-xi) + (1.0 - y) * softplus(xi))
            })
            .sum();
        Ok(self.tape.push(
            Tensor::scalar(total),
            Op::BceLogits {
                logits: self.id,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                pos_weight,
            },
            &[self.id],
        ))
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
    let tape = first.tape;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let base = vals[0].shape().to_vec();
    let rank = base.len();
    if axis >= rank {
        return Err(Error::Axis {
            op: "concat",
            axis,
            rank,
        });
    }
    let mut out_shape = base.clone();
    out_shape[axis] = 0;
    for v in &vals {
        let s = v.shape();
        let compatible = s.len() == rank
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", &base, s));
        }
        out_shape[axis] += s[axis];
    }
    let outer: usize = base[..axis].iter().product();
    let tail: usize = base[axis + 1..].iter().product();
    let inner: Vec<usize> = vals.iter().map(|v| v.shape()[axis] * tail).collect();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for (v, &w) in vals.iter().zip(&inner) {
            data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
        }
    }
    let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
    Ok(tape.push(
        Tensor::from_parts(out_shape, data),
        Op::Concat {
            parts: ids.clone(),
            outer,
            inner,
        },
        &ids,
    ))
}

/// Stacks `N` matrices `[B × d]` into `[B × N × d]`.
pub fn stack<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Input("stack of zero tensors".into()))?;
    let tape = first.tape;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let (bsz, d) = vals[0].dims2()?;
    if let Some(bad) = vals.iter().find(|v| v.shape() != [bsz, d]) {
        return Err(Error::shape("stack", vals[0].shape(), bad.shape()));
    }
    let n = parts.len();
    let mut data = vec![0.0; bsz * n * d];
    for (j, v) in vals.iter().enumerate() {
        for b in 0..bsz {
            let off = (b * n + j) * d;
            data[off..off + d].copy_from_slice(&v.data()[b * d..(b + 1) * d]);
        }
    }
    let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
    Ok(tape.push(
        Tensor::from_parts(vec![bsz, n, d], data),
        Op::Stack(ids.clone()),
        &ids,
    ))
}
