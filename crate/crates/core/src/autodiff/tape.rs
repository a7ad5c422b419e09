use std::cell::{Ref, RefCell};
use std::ops;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use super::tensor::Tensor;

/// Smoothing constant of [`Var::abs_smooth`].
pub const ABS_SMOOTH_EPS: f64 = 1e-9;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("operands belong to different tapes")]
    TapeMismatch,
    #[error("backward() needs a scalar output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    AbsSmooth(usize),
    Tanh(usize),
    Exp(usize),
    Relu(usize),
    Square(usize),
    Scale(usize, f64),
    Offset(usize),
    Sum(usize),
    Dot(usize, usize),
    MatVec(usize, usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Dense { x: usize, w: usize, b: usize, tanh: bool, mask: Option<Rc<Tensor>> },
    Select(Rc<Vec<bool>>, usize, usize),
    Clamp(usize, f64, f64),
    PosTail(usize, f64),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterRows(usize, Rc<Vec<usize>>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Col(usize, usize),
    Reshape(usize),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of a computation. Every operand index precedes the
/// node that uses it, so one reverse sweep visits nodes in topological
/// order.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Tensor::scalar(x))
    }

    fn push(&self, op: Op, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, needs_grad });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    fn value(&self, idx: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    fn unary(&self, a: usize, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let value = self.value(a).map(f);
        self.push(op, value, self.needs(a))
    }

    fn binary(&self, a: usize, b: usize, op: Op, value: Tensor) -> Var<'_> {
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, needs)
    }

    fn same<'t>(&'t self, other: &Var<'_>) -> Result<(), AutodiffError> {
        if other.tape.id == self.id {
            Ok(())
        } else {
            Err(AutodiffError::TapeMismatch)
        }
    }

    /// Elementwise division that rejects zero denominators.
    pub fn checked_div<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same(&a)?;
        self.same(&b)?;
        if self.value(b.idx).data().iter().any(|&x| x == 0.0) {
            return Err(AutodiffError::DivisionByZero);
        }
        Ok(a.div(b))
    }

    /// Binary elementwise add that reports a tape mismatch instead of
    /// panicking.
    pub fn try_add<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same(&a)?;
        self.same(&b)?;
        Ok(a.add(b))
    }

    /// Horizontal concatenation of row-aligned blocks.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        for p in parts {
            p.check(&parts[0]);
        }
        let rows = parts[0].rows();
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| self.value(p.idx)).collect();
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for v in &vals {
                    assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(rows, cols, data)
        };
        let needs = parts.iter().any(|p| self.needs(p.idx));
        self.push(Op::ConcatCols(parts.iter().map(|p| p.idx).collect()), value, needs)
    }

    /// Vertical concatenation of column-aligned blocks.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        for p in parts {
            p.check(&parts[0]);
        }
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| self.value(p.idx)).collect();
            let cols = vals[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for v in &vals {
                assert_eq!(v.cols(), cols, "concat_rows column mismatch");
                data.extend_from_slice(v.data());
                rows += v.rows();
            }
            Tensor::new(rows, cols, data)
        };
        let needs = parts.iter().any(|p| self.needs(p.idx));
        self.push(Op::ConcatRows(parts.iter().map(|p| p.idx).collect()), value, needs)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        self.same(&output)?;
        let nodes = self.nodes.borrow();
        let out = &nodes[output.idx].value;
        if out.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar { rows: out.rows(), cols: out.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.idx] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if node.needs_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    if !nodes[idx].needs_grad {
        return;
    }
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, g.clone());
            acc(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, g.clone());
            acc(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, g.zip_map(val(*b), |g, b| g * b));
            }
            if nodes[*b].needs_grad {
                acc(nodes, grads, *b, g.zip_map(val(*a), |g, a| g * a));
            }
        }
        Op::Div(a, b) => {
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, g.zip_map(val(*b), |g, b| g / b));
            }
            if nodes[*b].needs_grad {
                // d(a/b)/db = -y / b
                let t = g.zip_map(y, |g, y| -g * y);
                acc(nodes, grads, *b, t.zip_map(val(*b), |t, b| t / b));
            }
        }
        Op::Neg(a) => acc(nodes, grads, *a, g.map(|x| -x)),
        Op::Sin(a) => acc(nodes, grads, *a, g.zip_map(val(*a), |g, a| g * a.cos())),
        Op::Cos(a) => acc(nodes, grads, *a, g.zip_map(val(*a), |g, a| -g * a.sin())),
        Op::Sqrt(a) => acc(nodes, grads, *a, g.zip_map(y, |g, y| g / (2.0 * y))),
        Op::AbsSmooth(a) => {
            let t = g.zip_map(val(*a), |g, a| g * a);
            acc(nodes, grads, *a, t.zip_map(y, |t, y| t / y));
        }
        Op::Tanh(a) => acc(nodes, grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
        Op::Exp(a) => acc(nodes, grads, *a, g.zip_map(y, |g, y| g * y)),
        Op::Relu(a) => acc(nodes, grads, *a, g.zip_map(val(*a), |g, a| if a > 0.0 { g } else { 0.0 })),
        Op::Square(a) => acc(nodes, grads, *a, g.zip_map(val(*a), |g, a| 2.0 * a * g)),
        Op::Scale(a, c) => acc(nodes, grads, *a, g.map(|x| x * c)),
        Op::Offset(a) => acc(nodes, grads, *a, g.clone()),
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            acc(nodes, grads, *a, Tensor::filled(r, c, g.item()));
        }
        Op::Dot(a, b) => {
            let s = g.item();
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, val(*b).map(|x| x * s));
            }
            if nodes[*b].needs_grad {
                acc(nodes, grads, *b, val(*a).map(|x| x * s));
            }
        }
        Op::MatVec(a, w) | Op::MatMul(a, w) => {
            // y = A W
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, Tensor::matmul_t(g, false, val(*w), true));
            }
            if nodes[*w].needs_grad {
                acc(nodes, grads, *w, Tensor::matmul_t(val(*a), true, g, false));
            }
        }
        Op::Dense { x, w, b, tanh, mask } => {
            // y = mask * act(x W + b)
            let mut gp = g.clone();
            if let Some(m) = mask {
                for (gi, mi) in gp.data_mut().iter_mut().zip(m.data()) {
                    *gi *= mi;
                }
            }
            if *tanh {
                // Recover tanh(pre) from y where the mask is nonzero; masked
                // entries have zero adjoint anyway.
                let scale = mask.as_ref().map(|m| m.data());
                for (k, (gi, yi)) in gp.data_mut().iter_mut().zip(y.data()).enumerate() {
                    let a = match scale {
                        Some(m) if m[k] != 0.0 => yi / m[k],
                        Some(_) => 0.0,
                        None => *yi,
                    };
                    *gi *= 1.0 - a * a;
                }
            }
            if nodes[*x].needs_grad {
                acc(nodes, grads, *x, Tensor::matmul_t(&gp, false, val(*w), true));
            }
            if nodes[*w].needs_grad {
                acc(nodes, grads, *w, Tensor::matmul_t(val(*x), true, &gp, false));
            }
            if nodes[*b].needs_grad {
                let mut gb = Tensor::zeros(1, gp.cols());
                for r in 0..gp.rows() {
                    for (s, v) in gb.data_mut().iter_mut().zip(gp.row(r)) {
                        *s += v;
                    }
                }
                acc(nodes, grads, *b, gb);
            }
        }
        Op::AddRow(a, bias) => {
            acc(nodes, grads, *a, g.clone());
            if nodes[*bias].needs_grad {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                acc(nodes, grads, *bias, gb);
            }
        }
        Op::Select(mask, a, b) => {
            let pick = |on: bool| {
                let mut t = g.clone();
                for (x, &m) in t.data_mut().iter_mut().zip(mask.iter()) {
                    if m != on {
                        *x = 0.0;
                    }
                }
                t
            };
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, pick(true));
            }
            if nodes[*b].needs_grad {
                acc(nodes, grads, *b, pick(false));
            }
        }
        Op::Clamp(a, lo, hi) => acc(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |g, a| if a > *lo && a < *hi { g } else { 0.0 }),
        ),
        Op::PosTail(a, c) => acc(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |g, a| if a >= *c { g } else { g * ((a - c) / c).exp() }),
        ),
        Op::GatherRows(a, idx) => {
            let src = val(*a);
            let mut ga = Tensor::zeros(src.rows(), src.cols());
            let cols = src.cols();
            for (r, &i) in idx.iter().enumerate() {
                let dst = &mut ga.data_mut()[i * cols..(i + 1) * cols];
                for (d, v) in dst.iter_mut().zip(g.row(r)) {
                    *d += v;
                }
            }
            acc(nodes, grads, *a, ga);
        }
        Op::ScatterRows(a, idx) => {
            let cols = g.cols();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx.iter() {
                data.extend_from_slice(g.row(i));
            }
            acc(nodes, grads, *a, Tensor::new(idx.len(), cols, data));
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).cols();
                if nodes[p].needs_grad {
                    let mut data = Vec::with_capacity(g.rows() * pc);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    acc(nodes, grads, p, Tensor::new(g.rows(), pc, data));
                }
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let cols = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pr = val(p).rows();
                if nodes[p].needs_grad {
                    let data = g.data()[offset * cols..(offset + pr) * cols].to_vec();
                    acc(nodes, grads, p, Tensor::new(pr, cols, data));
                }
                offset += pr;
            }
        }
        Op::Reshape(a) => {
            let (r, c) = val(*a).shape();
            acc(nodes, grads, *a, Tensor::new(r, c, g.data().to_vec()));
        }
        Op::Col(a, c) => {
            let (r, cols) = val(*a).shape();
            let mut ga = Tensor::zeros(r, cols);
            for i in 0..r {
                ga.data_mut()[i * cols + c] = g.data()[i];
            }
            acc(nodes, grads, *a, ga);
        }
    }
}

/// Adjoints of every node reached by a reverse sweep.
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `var`; `None` when the output
    /// does not depend on it.
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        assert_eq!(var.tape.id, self.tape, "variable from a different tape");
        self.grads[var.idx].as_ref()
    }

    /// Like [`Gradients::get`] but zero-filled when unreached.
    pub fn get_or_zero(&self, var: &Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = var.shape();
            Tensor::zeros(r, c)
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.idx, *self.value())
    }
}

impl<'t> Var<'t> {
    fn check(&self, other: &Var<'_>) {
        assert!(self.tape.id == other.tape.id, "{}", AutodiffError::TapeMismatch);
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(self.idx)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    fn elementwise(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.check(&other);
        let value = {
            let (a, b) = (self.value(), other.value());
            a.zip_map(&b, f)
        };
        self.tape.binary(self.idx, other.idx, op, value)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Add(self.idx, other.idx), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Sub(self.idx, other.idx), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Mul(self.idx, other.idx), |a, b| a * b)
    }

    /// Elementwise division with IEEE semantics; see [`Tape::checked_div`].
    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Div(self.idx, other.idx), |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Neg(self.idx), |x| -x)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sin(self.idx), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Cos(self.idx), f64::cos)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sqrt(self.idx), f64::sqrt)
    }

    /// `sqrt(x^2 + eps^2)` with `eps = ABS_SMOOTH_EPS`: a smooth `|x|`.
    pub fn abs_smooth(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::AbsSmooth(self.idx), |x| (x * x + ABS_SMOOTH_EPS * ABS_SMOOTH_EPS).sqrt())
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Tanh(self.idx), f64::tanh)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Exp(self.idx), f64::exp)
    }

    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    pub fn relu_plus(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Relu(self.idx), |x| x.max(0.0))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Square(self.idx), |x| x * x)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Scale(self.idx, c), |x| x * c)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Offset(self.idx), |x| x + c)
    }

    /// Clamps to `[lo, hi]`; zero gradient outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Clamp(self.idx, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Identity above `c`, `c exp((x - c) / c)` below: continuously
    /// differentiable and strictly positive.
    pub fn pos_tail(self, c: f64) -> Var<'t> {
        assert!(c > 0.0);
        self.tape
            .unary(self.idx, Op::PosTail(self.idx, c), |x| if x >= c { x } else { c * ((x - c) / c).exp() })
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Op::Sum(self.idx), Tensor::scalar(s), self.tape.needs(self.idx))
    }

    pub fn dot(self, other: Var<'t>) -> Var<'t> {
        self.check(&other);
        let s = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.shape(), b.shape(), "dot shape mismatch");
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        self.tape.binary(self.idx, other.idx, Op::Dot(self.idx, other.idx), Tensor::scalar(s))
    }

    /// `self * x` for a matrix `self` and column vector `x`.
    pub fn matvec(self, x: Var<'t>) -> Var<'t> {
        self.check(&x);
        let value = {
            let (w, xv) = (self.value(), x.value());
            assert_eq!(xv.cols(), 1, "matvec needs a column vector");
            w.matmul(&xv)
        };
        self.tape.binary(self.idx, x.idx, Op::MatVec(self.idx, x.idx), value)
    }

    /// Matrix product `self * w`.
    pub fn matmul(self, w: Var<'t>) -> Var<'t> {
        self.check(&w);
        let value = self.value().matmul(&w.value());
        self.tape.binary(self.idx, w.idx, Op::MatMul(self.idx, w.idx), value)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        self.check(&bias);
        let value = {
            let (a, b) = (self.value(), bias.value());
            assert_eq!((1, a.cols()), b.shape(), "bias shape mismatch");
            let mut out = a.clone();
            let cols = a.cols();
            for (k, x) in out.data_mut().iter_mut().enumerate() {
                *x += b.data()[k % cols];
            }
            out
        };
        self.tape.binary(self.idx, bias.idx, Op::AddRow(self.idx, bias.idx), value)
    }

    /// Fully connected layer `mask * act(self W + b)` as a single node, where
    /// `act` is `tanh` or the identity and `mask` an optional constant.
    pub fn dense(self, w: Var<'t>, b: Var<'t>, tanh: bool, mask: Option<Rc<Tensor>>) -> Var<'t> {
        self.check(&w);
        self.check(&b);
        let value = {
            let (x, wv, bv) = (self.value(), w.value(), b.value());
            assert_eq!((1, wv.cols()), bv.shape(), "bias shape mismatch");
            let mut y = x.matmul(&wv);
            let cols = y.cols();
            for (k, v) in y.data_mut().iter_mut().enumerate() {
                *v += bv.data()[k % cols];
                if tanh {
                    *v = v.tanh();
                }
            }
            if let Some(m) = &mask {
                assert_eq!(m.shape(), y.shape(), "dropout mask shape mismatch");
                for (v, mi) in y.data_mut().iter_mut().zip(m.data()) {
                    *v *= mi;
                }
            }
            y
        };
        let needs = self.tape.needs(self.idx) || self.tape.needs(w.idx) || self.tape.needs(b.idx);
        self.tape.push(Op::Dense { x: self.idx, w: w.idx, b: b.idx, tanh, mask }, value, needs)
    }

    /// Elementwise `mask ? self : other`.
    pub fn select(self, mask: Rc<Vec<bool>>, other: Var<'t>) -> Var<'t> {
        self.check(&other);
        let value = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.len(), mask.len(), "select mask length mismatch");
            let mut out = a.clone();
            for ((x, &m), y) in out.data_mut().iter_mut().zip(mask.iter()).zip(b.data()) {
                if !m {
                    *x = *y;
                }
            }
            out
        };
        self.tape.binary(self.idx, other.idx, Op::Select(mask, self.idx, other.idx), value)
    }

    /// Elementwise maximum (ties pick `self`).
    pub fn max(self, other: Var<'t>) -> Var<'t> {
        let mask: Vec<bool> = {
            let (a, b) = (self.value(), other.value());
            a.data().iter().zip(b.data()).map(|(x, y)| x >= y).collect()
        };
        self.select(Rc::new(mask), other)
    }

    /// Row `r` of the result is row `idx[r]` of `self`.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let value = {
            let a = self.value();
            let mut data = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx.iter() {
                data.extend_from_slice(a.row(i));
            }
            Tensor::new(idx.len(), a.cols(), data)
        };
        self.tape.push(Op::GatherRows(self.idx, idx), value, self.tape.needs(self.idx))
    }

    /// Sums row `r` of `self` into row `idx[r]` of an `n_rows`-row result.
    pub fn scatter_add_rows(self, idx: Rc<Vec<usize>>, n_rows: usize) -> Var<'t> {
        let value = {
            let a = self.value();
            assert_eq!(a.rows(), idx.len(), "scatter index length mismatch");
            let cols = a.cols();
            let mut out = Tensor::zeros(n_rows, cols);
            for (r, &i) in idx.iter().enumerate() {
                let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
                for (d, v) in dst.iter_mut().zip(a.row(r)) {
                    *d += v;
                }
            }
            out
        };
        self.tape.push(Op::ScatterRows(self.idx, idx), value, self.tape.needs(self.idx))
    }

    /// Same row-major data viewed as `rows x cols`.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let value = Tensor::new(rows, cols, self.value().data().to_vec());
        self.tape.push(Op::Reshape(self.idx), value, self.tape.needs(self.idx))
    }

    pub fn col(self, c: usize) -> Var<'t> {
        let value = {
            let a = self.value();
            Tensor::column((0..a.rows()).map(|r| a.get(r, c)).collect())
        };
        self.tape.push(Op::Col(self.idx, c), value, self.tape.needs(self.idx))
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl<'t> ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::$method(self, rhs)
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
