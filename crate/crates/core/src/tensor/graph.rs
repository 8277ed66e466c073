use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::matrix::{self, Matrix};
use crate::error::{Error, Result};

/// Operation recorded for a graph node. Parents are node ids in the same graph.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a + row`, where `row` is `1 x cols` and is broadcast over the rows of `a`.
    AddRow(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    Transpose(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    PairwiseSqDists(usize, usize),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul_elementwise",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Recip(..) => "recip",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Transpose(..) => "transpose",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::PairwiseSqDists(..) => "pairwise_sq_dists",
        }
    }

    pub(crate) fn parents(&self) -> ([usize; 2], usize) {
        match *self {
            Op::Leaf => ([0, 0], 0),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b)
            | Op::PairwiseSqDists(a, b) => ([a, b], 2),
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::SliceCols(a, _, _)
            | Op::Transpose(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::BroadcastScalar(a) => ([a, 0], 1),
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Rc<Matrix>,
    pub(crate) requires_grad: bool,
}

/// A differentiation graph. Nodes are appended in creation order, which is a
/// topological order, so backward passes simply walk ids downwards.
///
/// Cloning a `Graph` clones the handle, not the nodes.
#[derive(Clone, Default)]
pub struct Graph {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.len())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a trainable leaf.
    pub fn param(&self, value: Matrix) -> Result<Tensor> {
        self.leaf(value, true)
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&self, value: Matrix) -> Result<Tensor> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Result<Tensor> {
        if value.rows() == 0 || value.cols() == 0 {
            return Err(Error::invalid(format!(
                "tensor dims must be >= 1, got {:?}",
                value.shape()
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push_unchecked(Op::Leaf, value, requires_grad))
    }

    fn push_unchecked(&self, op: Op, value: Matrix, requires_grad: bool) -> Tensor {
        let shape = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    pub(crate) fn push(&self, op: Op, value: Matrix) -> Result<Tensor> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            let (ps, n) = op.parents();
            ps[..n].iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    pub(crate) fn tensor(&self, id: usize) -> Tensor {
        let shape = self.nodes.borrow()[id].value.shape();
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// Handle to a node of a [`Graph`]. Cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
    shape: (usize, usize),
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.id, self.shape)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape,
        right: b.shape,
    }
}

impl Tensor {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.0
    }

    pub fn cols(&self) -> usize {
        self.shape.1
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.graph.value(self.id)
    }

    /// Value of a `1 x 1` tensor.
    pub fn scalar(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn check_graph(&self, other: &Tensor) -> Result<()> {
        if self.graph.same(&other.graph) {
            Ok(())
        } else {
            Err(Error::GraphMismatch)
        }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Result<Tensor> {
        let v = f(&self.value());
        self.graph.push(op, v)
    }

    fn binary_same_shape(
        &self,
        other: &Tensor,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.check_graph(other)?;
        if self.shape != other.shape {
            return Err(mismatch(op.name(), self, other));
        }
        let v = self.value().zip_map(&other.value(), f);
        self.graph.push(op, v)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_graph(other)?;
        if self.cols() != other.rows() {
            return Err(mismatch("matmul", self, other));
        }
        let v = matrix::matmul_nn(&self.value(), &other.value());
        self.graph.push(Op::MatMul(self.id, other.id), v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_graph(row)?;
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(mismatch("add_row", self, row));
        }
        let a = self.value();
        let r = row.value();
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.graph.push(Op::AddRow(self.id, row.id), v)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::Scale(self.id, c), |m| m.map(|v| v * c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Adds a constant to every entry (recorded as an add with a constant leaf).
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let k = self.graph.constant(Matrix::filled(self.rows(), self.cols(), c))?;
        self.add(&k)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid(format!(
                "leaky_relu slope must be in (0,1), got {slope}"
            )));
        }
        self.unary(Op::LeakyRelu(self.id, slope), |m| {
            m.map(|v| if v > 0.0 { v } else { slope * v })
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(Op::Sigmoid(self.id), |m| m.map(sigmoid))
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.unary(Op::SoftmaxRows(self.id), softmax_rows)
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        self.unary(Op::LogSoftmaxRows(self.id), |m| {
            let mut out = m.clone();
            for i in 0..out.rows() {
                let r = out.row_mut(i);
                let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + r.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                for v in r.iter_mut() {
                    *v -= lse;
                }
            }
            out
        })
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp(self.id), |m| m.map(f64::exp))
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(Op::Log(self.id), |m| m.map(f64::ln))
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(Op::Square(self.id), |m| m.map(|v| v * v))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Op::Sqrt(self.id), |m| m.map(f64::sqrt))
    }

    pub fn recip(&self) -> Result<Tensor> {
        self.unary(Op::Recip(self.id), |m| m.map(|v| 1.0 / v))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        self.unary(Op::Sum(self.id), |m| Matrix::scalar(m.sum()))
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.unary(Op::Mean(self.id), |m| {
            Matrix::scalar(m.sum() / m.len() as f64)
        })
    }

    /// Column sums, `1 x cols`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        self.unary(Op::SumRows(self.id), Matrix::sum_rows)
    }

    /// Row sums, `rows x 1`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        self.unary(Op::SumCols(self.id), Matrix::sum_cols)
    }

    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        self.check_graph(other)?;
        if self.rows() != other.rows() {
            return Err(mismatch("concat_cols", self, other));
        }
        let v = self.value().hstack(&other.value())?;
        self.graph.push(Op::ConcatCols(self.id, other.id), v)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.cols() {
            return Err(Error::invalid(format!(
                "slice {start}..{end} out of range for {} columns",
                self.cols()
            )));
        }
        let cols: Vec<usize> = (start..end).collect();
        self.unary(Op::SliceCols(self.id, start, end), |m| m.select_cols(&cols))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.unary(Op::Transpose(self.id), Matrix::transpose)
    }

    /// Repeats a `1 x cols` row `n` times.
    pub fn broadcast_rows(&self, n: usize) -> Result<Tensor> {
        if self.rows() != 1 || n == 0 {
            return Err(Error::invalid("broadcast_rows needs a 1 x m tensor"));
        }
        self.unary(Op::BroadcastRows(self.id), |m| {
            let mut data = Vec::with_capacity(n * m.cols());
            for _ in 0..n {
                data.extend_from_slice(m.data());
            }
            Matrix::new(n, m.cols(), data).expect("shape")
        })
    }

    /// Repeats a `rows x 1` column `m` times.
    pub fn broadcast_cols(&self, m: usize) -> Result<Tensor> {
        if self.cols() != 1 || m == 0 {
            return Err(Error::invalid("broadcast_cols needs an n x 1 tensor"));
        }
        self.unary(Op::BroadcastCols(self.id), |v| {
            let data = v
                .data()
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, m))
                .collect();
            Matrix::new(v.rows(), m, data).expect("shape")
        })
    }

    /// Fills a `rows x cols` tensor with the value of a `1 x 1` tensor.
    pub fn broadcast_scalar(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if self.shape != (1, 1) || rows == 0 || cols == 0 {
            return Err(Error::invalid("broadcast_scalar needs a 1 x 1 tensor"));
        }
        self.unary(Op::BroadcastScalar(self.id), |v| {
            Matrix::filled(rows, cols, v.data()[0])
        })
    }

    /// `out[i][j] = ||self_i - other_j||^2`.
    pub fn pairwise_sq_dists(&self, other: &Tensor) -> Result<Tensor> {
        self.check_graph(other)?;
        if self.cols() != other.cols() {
            return Err(mismatch("pairwise_sq_dists", self, other));
        }
        let v = matrix::pairwise_sq_dists(&self.value(), &other.value());
        self.graph.push(Op::PairwiseSqDists(self.id, other.id), v)
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in r.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in r.iter_mut() {
            *v /= z;
        }
    }
    out
}
