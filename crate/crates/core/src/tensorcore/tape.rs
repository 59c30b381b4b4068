//! Dynamic reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value and input
//! references, so nodes are topologically ordered by construction. The
//! backward sweep walks them once, last to first.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    AddBias { x: usize, bias: usize },
    Sin { x: usize, omega: f64 },
    Sigmoid { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Square { x: usize },
    Scale { x: usize, c: f64 },
    AddScalar { x: usize },
    Sum { x: usize },
    Mean { x: usize },
    Log { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    ConcatCols { a: usize, b: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of primitive operations.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`; `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Result<Option<&Tensor>> {
        if var.tape != self.tape {
            return Err(Error::contract("variable belongs to a different tape"));
        }
        Ok(self.grads.get(var.index).and_then(|g| g.as_ref()))
    }

    /// Adjoint of `var`, or zeros shaped like `like` when it is disconnected.
    pub fn get_or_zeros(&self, var: Var, like: &[usize]) -> Result<Tensor> {
        Ok(match self.get(var)? {
            Some(t) => t.clone(),
            None => Tensor::zeros(like),
        })
    }
}

fn broadcast_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(format!(
            "{what}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = match (ad.len(), bd.len()) {
        (la, lb) if la == lb => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        (_, 1) => ad.iter().map(|&x| f(x, bd[0])).collect(),
        _ => (0..n).map(|i| f(ad[0], bd[i])).collect(),
    };
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Sums `grad` down to `target` length when the operand was broadcast.
fn reduce_to(grad: Vec<f64>, target: &Tensor) -> Tensor {
    if grad.len() == target.len() {
        Tensor::new(target.shape().to_vec(), grad).expect("same length")
    } else {
        Tensor::new(target.shape().to_vec(), vec![grad.iter().sum()]).expect("scalar")
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::contract("variable does not belong to this tape"));
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(self.val(i))
    }

    /// Matrix product `a * b` or, with `trans_b`, `a * b^T`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::shape("matmul expects matrices"));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = if trans_b {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}{}",
                ta.shape(),
                tb.shape(),
                if trans_b { "^T" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), trans_b, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul { a: ia, b: ib, trans_b }, value))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (tx, tb) = (self.val(ix), self.val(ib));
        let n = tx.cols();
        if tb.len() != n {
            return Err(Error::shape(format!(
                "bias of length {} added to rows of length {}",
                tb.len(),
                n
            )));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias { x: ix, bias: ib }, value))
    }

    /// `sin(omega * x)` elementwise.
    pub fn sin(&mut self, x: Var, omega: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(|v| (omega * v).sin());
        Ok(self.push(Op::Sin { x: ix, omega }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(sigmoid);
        Ok(self.push(Op::Sigmoid { x: ix }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, |ia, ib| Op::Add { a: ia, b: ib })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, |ia, ib| Op::Sub { a: ia, b: ib })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, |ia, ib| Op::Mul { a: ia, b: ib })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, |ia, ib| Op::Div { a: ia, b: ib })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let shape = broadcast_pair(ta, tb, what)?;
        let value = zip_broadcast(ta, tb, shape, f);
        Ok(self.push(op(ia, ib), value))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(|v| v * v);
        Ok(self.push(Op::Square { x: ix }, value))
    }

    /// `c * x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(|v| c * v);
        Ok(self.push(Op::Scale { x: ix, c }, value))
    }

    /// `x + c` for a constant `c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(|v| v + c);
        Ok(self.push(Op::AddScalar { x: ix }, value))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = Tensor::scalar(self.val(ix).sum());
        Ok(self.push(Op::Sum { x: ix }, value))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if t.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(Op::Mean { x: ix }, value))
    }

    /// Natural logarithm. Non-positive inputs are a numerical error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if let Some(bad) = t.data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numerical(format!("log of non-positive value {bad}")));
        }
        let value = t.map(f64::ln);
        Ok(self.push(Op::Log { x: ix }, value))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.val(ix).map(|v| v.clamp(lo, hi));
        Ok(self.push(Op::Clamp { x: ix, lo, hi }, value))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} and {:?} by columns",
                ta.shape(),
                tb.shape()
            )));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::new(vec![ta.rows(), ca + cb], data)?;
        Ok(self.push(Op::ConcatCols { a: ia, b: ib }, value))
    }

    /// Reverse sweep seeded with `output_grad` at `output`.
    pub fn backward(&self, output: Var, output_grad: &Tensor) -> Result<Gradients> {
        let out = self.check(output)?;
        if output_grad.shape() != self.val(out).shape() {
            return Err(Error::contract(format!(
                "output gradient shape {:?} does not match output {:?}",
                output_grad.shape(),
                self.val(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(output_grad.clone());

        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            // Leaf adjoints stay in place for the caller to read.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let acc = |grads: &mut Vec<Option<Tensor>>, j: usize, t: Tensor| match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = node.value.cols();
                    // da = g * op(b)^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), !trans_b, 0.0, &mut da);
                    // db = a^T g, or (a^T g)^T = g^T a when b was transposed
                    let mut db = vec![0.0; k * n];
                    if trans_b {
                        gemm(n, m, k, g.data(), true, ta.data(), false, 0.0, &mut db);
                    } else {
                        gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, &mut db);
                    }
                    acc(&mut grads, a, Tensor::new(ta.shape().to_vec(), da)?);
                    acc(&mut grads, b, Tensor::new(tb.shape().to_vec(), db)?);
                }
                Op::AddBias { x, bias } => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, bias, Tensor::new(self.val(bias).shape().to_vec(), db)?);
                    acc(&mut grads, x, g);
                }
                Op::Sin { x, omega } => {
                    let tx = self.val(x);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&d, &v)| d * omega * (omega * v).cos())
                        .collect();
                    acc(&mut grads, x, Tensor::new(tx.shape().to_vec(), data)?);
                }
                Op::Sigmoid { x } => {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| d * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, x, Tensor::new(node.value.shape().to_vec(), data)?);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, a, reduce_to(g.data().to_vec(), self.val(a)));
                    acc(&mut grads, b, reduce_to(g.into_data(), self.val(b)));
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, a, reduce_to(g.data().to_vec(), self.val(a)));
                    let neg = g.data().iter().map(|v| -v).collect();
                    acc(&mut grads, b, reduce_to(neg, self.val(b)));
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    let shape = g.shape().to_vec();
                    let da = zip_broadcast(&g, tb, shape.clone(), |d, y| d * y);
                    let db = zip_broadcast(&g, ta, shape, |d, x| d * x);
                    acc(&mut grads, a, reduce_to(da.into_data(), ta));
                    acc(&mut grads, b, reduce_to(db.into_data(), tb));
                }
                Op::Div { a, b } => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    let shape = g.shape().to_vec();
                    let da = zip_broadcast(&g, tb, shape.clone(), |d, y| d / y);
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let out_over_b = zip_broadcast(&node.value, tb, shape.clone(), |o, y| -o / y);
                    let db = zip_broadcast(&g, &out_over_b, shape, |d, q| d * q);
                    acc(&mut grads, a, reduce_to(da.into_data(), ta));
                    acc(&mut grads, b, reduce_to(db.into_data(), tb));
                }
                Op::Square { x } => {
                    let tx = self.val(x);
                    let data = g.data().iter().zip(tx.data()).map(|(&d, &v)| 2.0 * d * v).collect();
                    acc(&mut grads, x, Tensor::new(tx.shape().to_vec(), data)?);
                }
                Op::Scale { x, c } => acc(&mut grads, x, g.map(|d| c * d)),
                Op::AddScalar { x } => acc(&mut grads, x, g),
                Op::Sum { x } => {
                    let tx = self.val(x);
                    acc(&mut grads, x, Tensor::full(tx.shape(), g.data()[0]));
                }
                Op::Mean { x } => {
                    let tx = self.val(x);
                    let d = g.data()[0] / tx.len() as f64;
                    acc(&mut grads, x, Tensor::full(tx.shape(), d));
                }
                Op::Log { x } => {
                    let tx = self.val(x);
                    let data = g.data().iter().zip(tx.data()).map(|(&d, &v)| d / v).collect();
                    acc(&mut grads, x, Tensor::new(tx.shape().to_vec(), data)?);
                }
                Op::Clamp { x, lo, hi } => {
                    let tx = self.val(x);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&d, &v)| if v >= lo && v <= hi { d } else { 0.0 })
                        .collect();
                    acc(&mut grads, x, Tensor::new(tx.shape().to_vec(), data)?);
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.val(a).cols();
                    let cols = g.cols();
                    let mut da = Vec::with_capacity(self.val(a).len());
                    let mut db = Vec::with_capacity(self.val(b).len());
                    for row in g.data().chunks(cols) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    acc(&mut grads, a, Tensor::new(self.val(a).shape().to_vec(), da)?);
                    acc(&mut grads, b, Tensor::new(self.val(b).shape().to_vec(), db)?);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
