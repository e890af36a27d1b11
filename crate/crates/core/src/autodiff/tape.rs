use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Sigmoid(usize),
    SafeRecip(usize),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    SliceCols(usize, usize),
    PadCols(usize, usize),
    ConcatRows(Rc<[usize]>),
    NormRows(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction. Backward passes are themselves recorded on the
/// tape, which makes gradients differentiable again (forces are gradients of
/// the energy, and the force loss is differentiated w.r.t. parameters).
///
/// A tape is single-threaded; use one tape per evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
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

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Stacks row blocks vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = parts[0].value().cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut tracked = false;
        for p in parts {
            self.check_same(p);
            let v = p.value();
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
            tracked |= self.tracked(p.id);
        }
        let ids: Rc<[usize]> = parts.iter().map(|p| p.id).collect();
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(ids), tracked)
    }

    fn check_same(&self, v: &Var<'_>) {
        assert!(
            std::ptr::eq(self, v.tape),
            "variable belongs to a different tape"
        );
    }

    /// Reverse accumulation of `d output / d wrt`, recorded on this tape.
    ///
    /// The returned variables can be differentiated again. Inputs that do not
    /// influence `output` receive zero gradients.
    pub fn gradients<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if !std::ptr::eq(self, output.tape) {
            return Err(Error::MissingDependency(
                "output variable belongs to a different tape".into(),
            ));
        }
        let out_shape = output.value().shape();
        if out_shape != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "gradient requires a scalar output, got shape {out_shape:?}"
            )));
        }
        for w in wrt {
            if !std::ptr::eq(self, w.tape) {
                return Err(Error::MissingDependency(format!(
                    "node #{} belongs to a different tape",
                    w.id
                )));
            }
            if !self.tracked(w.id) {
                return Err(Error::MissingDependency(format!(
                    "node #{} is detached from gradient tracking",
                    w.id
                )));
            }
        }

        let n = output.id + 1;
        let mut adj: Vec<Option<Var<'t>>> = vec![None; n];
        if self.tracked(output.id) {
            adj[output.id] = Some(self.scalar(1.0));
        }

        for id in (0..n).rev() {
            let Some(g) = adj[id] else { continue };
            let (op, tracked) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].tracked)
            };
            if !tracked {
                continue;
            }
            let y = Var { tape: self, id };
            let v = |i: usize| Var { tape: self, id: i };
            let mut acc = |i: usize, contrib: &dyn Fn() -> Var<'t>| {
                if self.tracked(i) {
                    let c = contrib();
                    adj[i] = Some(match adj[i] {
                        Some(prev) => prev + c,
                        None => c,
                    });
                }
            };
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    acc(a, &|| g);
                    acc(b, &|| g);
                }
                Op::Sub(a, b) => {
                    acc(a, &|| g);
                    acc(b, &|| -g);
                }
                Op::Mul(a, b) => {
                    acc(a, &|| g * v(b));
                    acc(b, &|| g * v(a));
                }
                Op::Div(a, b) => {
                    acc(a, &|| g / v(b));
                    acc(b, &|| -((g * y) / v(b)));
                }
                Op::Neg(a) => acc(a, &|| -g),
                Op::Scale(a, c) => acc(a, &|| g.scale(c)),
                Op::AddScalar(a) => acc(a, &|| g),
                Op::MatMul(a, b) => {
                    acc(a, &|| g.matmul(v(b).t()));
                    acc(b, &|| v(a).t().matmul(g));
                }
                Op::Transpose(a) => acc(a, &|| g.t()),
                Op::Exp(a) => acc(a, &|| g * y),
                Op::Sin(a) => acc(a, &|| g * v(a).cos()),
                Op::Cos(a) => acc(a, &|| -(g * v(a).sin())),
                Op::Sqrt(a) => acc(a, &|| (g * y.safe_recip()).scale(0.5)),
                Op::Sigmoid(a) => acc(a, &|| g * (y - y * y)),
                Op::SafeRecip(a) => acc(a, &|| -(g * y * y)),
                Op::SumAll(a) => {
                    let (r, c) = self.value_of(a).shape();
                    acc(a, &|| g.broadcast_to(r, c));
                }
                Op::SumRows(a) => {
                    let r = self.value_of(a).rows();
                    acc(a, &|| g.broadcast_rows(r));
                }
                Op::SumCols(a) => {
                    let c = self.value_of(a).cols();
                    acc(a, &|| g.broadcast_cols(c));
                }
                Op::BroadcastRows(a) => acc(a, &|| g.sum_rows()),
                Op::BroadcastCols(a) => acc(a, &|| g.sum_cols()),
                Op::BroadcastScalar(a) => acc(a, &|| g.sum()),
                Op::GatherRows(a, idx) => {
                    let n_rows = self.value_of(a).rows();
                    acc(a, &|| g.scatter_add_rows_rc(Rc::clone(&idx), n_rows));
                }
                Op::ScatterAddRows(a, idx) => {
                    acc(a, &|| g.gather_rows_rc(Rc::clone(&idx)));
                }
                Op::SliceCols(a, start) => {
                    let total = self.value_of(a).cols();
                    acc(a, &|| g.pad_cols(start, total));
                }
                Op::PadCols(a, start) => {
                    let width = self.value_of(a).cols();
                    acc(a, &|| g.slice_cols(start, start + width));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let rows = self.value_of(p).rows();
                        let range: Rc<[usize]> = (offset..offset + rows).collect();
                        acc(p, &|| g.gather_rows_rc(Rc::clone(&range)));
                        offset += rows;
                    }
                }
                Op::NormRows(a) => {
                    let c = self.value_of(a).cols();
                    acc(a, &|| (g * y.safe_recip()).broadcast_cols(c) * v(a));
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = w.value().shape();
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    /// Gradient values of a scalar output.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Tensor>> {
        Ok(self
            .gradients(output, wrt)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn unary(self, op: Op, value: Tensor) -> Self {
        self.tape.push(value, op, self.is_tracked())
    }

    fn binary(self, other: Self, op: Op, value: Tensor) -> Self {
        self.tape.check_same(&other);
        let tracked = self.is_tracked() || other.is_tracked();
        self.tape.push(value, op, tracked)
    }

    fn same_shape(&self, other: &Self, what: &str) -> (Rc<Tensor>, Rc<Tensor>) {
        let (a, b) = (self.value(), other.value());
        assert_eq!(
            a.shape(),
            b.shape(),
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        (a, b)
    }

    pub fn scale(self, c: f64) -> Self {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn add_scalar(self, c: f64) -> Self {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    pub fn matmul(self, other: Self) -> Self {
        let v = self.value().matmul(&other.value());
        self.binary(other, Op::MatMul(self.id, other.id), v)
    }

    pub fn t(self) -> Self {
        let v = self.value().transpose();
        self.unary(Op::Transpose(self.id), v)
    }

    pub fn exp(self) -> Self {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn sin(self) -> Self {
        let v = self.value().map(f64::sin);
        self.unary(Op::Sin(self.id), v)
    }

    pub fn cos(self) -> Self {
        let v = self.value().map(f64::cos);
        self.unary(Op::Cos(self.id), v)
    }

    pub fn sqrt(self) -> Self {
        let v = self.value().map(f64::sqrt);
        self.unary(Op::Sqrt(self.id), v)
    }

    pub fn sigmoid(self) -> Self {
        let v = self.value().map(stable_sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    /// Elementwise `1/x`, with `0` mapped to `0` (and a zero gradient there).
    pub fn safe_recip(self) -> Self {
        let v = self.value().map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.unary(Op::SafeRecip(self.id), v)
    }

    pub fn square(self) -> Self {
        self * self
    }

    /// Sum of all elements, as `1 × 1`.
    pub fn sum(self) -> Self {
        let v = Tensor::scalar(self.value().sum());
        self.unary(Op::SumAll(self.id), v)
    }

    /// Column sums: `r × c → 1 × c`.
    pub fn sum_rows(self) -> Self {
        let a = self.value();
        let mut out = vec![0.0; a.cols()];
        for r in 0..a.rows() {
            for (o, &x) in out.iter_mut().zip(a.row_slice(r)) {
                *o += x;
            }
        }
        self.unary(Op::SumRows(self.id), Tensor::from_vec(1, a.cols(), out))
    }

    /// Row sums: `r × c → r × 1`.
    pub fn sum_cols(self) -> Self {
        let a = self.value();
        let out: Vec<f64> = (0..a.rows()).map(|r| a.row_slice(r).iter().sum()).collect();
        self.unary(Op::SumCols(self.id), Tensor::from_vec(a.rows(), 1, out))
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Self {
        let a = self.value();
        assert_eq!(a.rows(), 1, "broadcast_rows expects a row vector");
        let v = Tensor::from_fn(rows, a.cols(), |_, c| a.get(0, c));
        self.unary(Op::BroadcastRows(self.id), v)
    }

    /// Repeats an `r × 1` column `cols` times.
    pub fn broadcast_cols(self, cols: usize) -> Self {
        let a = self.value();
        assert_eq!(a.cols(), 1, "broadcast_cols expects a column vector");
        let v = Tensor::from_fn(a.rows(), cols, |r, _| a.get(r, 0));
        self.unary(Op::BroadcastCols(self.id), v)
    }

    /// Fills an `rows × cols` tensor with a `1 × 1` value.
    pub fn broadcast_to(self, rows: usize, cols: usize) -> Self {
        let x = self.item();
        self.unary(Op::BroadcastScalar(self.id), Tensor::filled(rows, cols, x))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Self {
        self.gather_rows_rc(idx.into())
    }

    fn gather_rows_rc(self, idx: Rc<[usize]>) -> Self {
        let a = self.value();
        let cols = a.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            data.extend_from_slice(a.row_slice(i));
        }
        let v = Tensor::from_vec(idx.len(), cols, data);
        self.unary(Op::GatherRows(self.id, idx), v)
    }

    /// Adds row `k` of `self` into row `idx[k]` of an `n_rows`-row zero tensor,
    /// in ascending `k`.
    pub fn scatter_add_rows(self, idx: &[usize], n_rows: usize) -> Self {
        self.scatter_add_rows_rc(idx.into(), n_rows)
    }

    fn scatter_add_rows_rc(self, idx: Rc<[usize]>, n_rows: usize) -> Self {
        let a = self.value();
        assert_eq!(a.rows(), idx.len(), "scatter index length mismatch");
        let mut out = Tensor::zeros(n_rows, a.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (c, &x) in a.row_slice(k).iter().enumerate() {
                let cur = out.get(i, c);
                out.set(i, c, cur + x);
            }
        }
        self.unary(Op::ScatterAddRows(self.id, idx), out)
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Self {
        let a = self.value();
        assert!(start <= end && end <= a.cols(), "slice_cols out of range");
        let v = Tensor::from_fn(a.rows(), end - start, |r, c| a.get(r, start + c));
        self.unary(Op::SliceCols(self.id, start), v)
    }

    /// Embeds columns at offset `start` in a zero tensor `total` columns wide.
    pub fn pad_cols(self, start: usize, total: usize) -> Self {
        let a = self.value();
        assert!(start + a.cols() <= total, "pad_cols out of range");
        let v = Tensor::from_fn(a.rows(), total, |r, c| {
            if c >= start && c < start + a.cols() {
                a.get(r, c - start)
            } else {
                0.0
            }
        });
        self.unary(Op::PadCols(self.id, start), v)
    }

    /// Euclidean norm of each row, `r × c → r × 1`. The gradient at a zero
    /// row is zero.
    pub fn norm_rows(self) -> Self {
        let a = self.value();
        let out: Vec<f64> = (0..a.rows())
            .map(|r| a.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.unary(Op::NormRows(self.id), Tensor::from_vec(a.rows(), 1, out))
    }

    /// Copy of the value with no gradient path.
    pub fn detach(self) -> Self {
        self.tape.constant(self.value().as_ref().clone())
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let (a, b) = self.same_shape(&rhs, "add");
        let v = a.zip_map(&b, |x, y| x + y);
        self.binary(rhs, Op::Add(self.id, rhs.id), v)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let (a, b) = self.same_shape(&rhs, "sub");
        let v = a.zip_map(&b, |x, y| x - y);
        self.binary(rhs, Op::Sub(self.id, rhs.id), v)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = self.same_shape(&rhs, "mul");
        let v = a.zip_map(&b, |x, y| x * y);
        self.binary(rhs, Op::Mul(self.id, rhs.id), v)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = self.same_shape(&rhs, "div");
        let v = a.zip_map(&b, |x, y| x / y);
        self.binary(rhs, Op::Div(self.id, rhs.id), v)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        let v = self.value().map(|x| -x);
        self.unary(Op::Neg(self.id), v)
    }
}
