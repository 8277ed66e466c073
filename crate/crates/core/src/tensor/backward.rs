use std::rc::Rc;

use super::graph::{Graph, Op, Tensor};
use super::matrix::{self, Matrix};
use crate::error::{Error, Result};

/// Gradients of a scalar root with respect to every node it depends on.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `t`; zeros if `t` did not influence the root.
    pub fn get(&self, t: &Tensor) -> Matrix {
        match self.grads.get(t.id()).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = t.shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, t: &Tensor) -> Matrix {
        match self.grads.get_mut(t.id()).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes.get(t.id()).copied().unwrap_or(t.shape());
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Reverse-mode pass from a `1 x 1` root. Nodes that do not require gradients
/// are skipped entirely.
pub fn backward(root: &Tensor) -> Result<Gradients> {
    if root.shape() != (1, 1) {
        return Err(Error::NonScalarRoot(root.shape()));
    }
    let graph = root.graph();
    let nodes = graph.nodes.borrow();
    let n = root.id() + 1;
    let mut grads: Vec<Option<Matrix>> = vec![None; n];
    grads[root.id()] = Some(Matrix::scalar(1.0));

    for id in (0..n).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &nodes[id];
        if !node.requires_grad {
            grads[id] = Some(g);
            continue;
        }
        let out = &node.value;
        let val = |p: usize| -> &Rc<Matrix> { &nodes[p].value };
        let wants = |p: usize| nodes[p].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a], matrix::matmul_nt(&g, val(b)));
                }
                if wants(b) {
                    accumulate(&mut grads[b], matrix::matmul_tn(val(a), &g));
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a], g.clone());
                }
                if wants(b) {
                    accumulate(&mut grads[b], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a], g.clone());
                }
                if wants(b) {
                    accumulate(&mut grads[b], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a], g.zip_map(val(b), |x, y| x * y));
                }
                if wants(b) {
                    accumulate(&mut grads[b], g.zip_map(val(a), |x, y| x * y));
                }
            }
            Op::AddRow(a, r) => {
                if wants(a) {
                    accumulate(&mut grads[a], g.clone());
                }
                if wants(r) {
                    accumulate(&mut grads[r], g.sum_rows());
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a], g.map(|v| v * c)),
            Op::LeakyRelu(a, s) => accumulate(
                &mut grads[a],
                g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { gv * s }),
            ),
            Op::Sigmoid(a) => {
                accumulate(&mut grads[a], g.zip_map(out, |gv, s| gv * s * (1.0 - s)))
            }
            Op::SoftmaxRows(a) => {
                let mut d = g.clone();
                for i in 0..d.rows() {
                    let s = out.row(i);
                    let dot: f64 = g.row(i).iter().zip(s).map(|(x, y)| x * y).sum();
                    for (dv, sv) in d.row_mut(i).iter_mut().zip(s) {
                        *dv = sv * (*dv - dot);
                    }
                }
                accumulate(&mut grads[a], d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for i in 0..d.rows() {
                    let total: f64 = g.row(i).iter().sum();
                    for (dv, lv) in d.row_mut(i).iter_mut().zip(out.row(i)) {
                        *dv -= lv.exp() * total;
                    }
                }
                accumulate(&mut grads[a], d);
            }
            Op::Exp(a) => accumulate(&mut grads[a], g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => accumulate(&mut grads[a], g.zip_map(val(a), |x, y| x / y)),
            Op::Square(a) => {
                accumulate(&mut grads[a], g.zip_map(val(a), |x, y| 2.0 * x * y))
            }
            // Subgradient 0 at the origin keeps penalties on zero-norm gradients finite.
            Op::Sqrt(a) => accumulate(
                &mut grads[a],
                g.zip_map(out, |x, s| if s > 0.0 { x / (2.0 * s) } else { 0.0 }),
            ),
            Op::Recip(a) => accumulate(&mut grads[a], g.zip_map(out, |x, r| -x * r * r)),
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                accumulate(&mut grads[a], Matrix::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                let k = g.data()[0] / (r * c) as f64;
                accumulate(&mut grads[a], Matrix::filled(r, c, k));
            }
            Op::SumRows(a) => {
                let rows = val(a).rows();
                accumulate(&mut grads[a], repeat_rows(&g, rows));
            }
            Op::SumCols(a) => {
                let cols = val(a).cols();
                accumulate(&mut grads[a], repeat_cols(&g, cols));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                if wants(a) {
                    let idx: Vec<usize> = (0..ca).collect();
                    accumulate(&mut grads[a], g.select_cols(&idx));
                }
                if wants(b) {
                    let idx: Vec<usize> = (ca..ca + cb).collect();
                    accumulate(&mut grads[b], g.select_cols(&idx));
                }
            }
            Op::SliceCols(a, start, _) => {
                let (r, c) = val(a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(&mut grads[a], d);
            }
            Op::Transpose(a) => accumulate(&mut grads[a], g.transpose()),
            Op::BroadcastRows(a) => accumulate(&mut grads[a], g.sum_rows()),
            Op::BroadcastCols(a) => accumulate(&mut grads[a], g.sum_cols()),
            Op::BroadcastScalar(a) => accumulate(&mut grads[a], Matrix::scalar(g.sum())),
            Op::PairwiseSqDists(a, b) => {
                let x = val(a);
                let y = val(b);
                if wants(a) {
                    // 2 * (diag(rowsum G) X - G Y)
                    let gy = matrix::matmul_nn(&g, y);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let rs: f64 = g.row(i).iter().sum();
                        for (k, dv) in d.row_mut(i).iter_mut().enumerate() {
                            *dv = 2.0 * (rs * x.get(i, k) - gy.get(i, k));
                        }
                    }
                    accumulate(&mut grads[a], d);
                }
                if wants(b) {
                    // 2 * (diag(colsum G) Y - G^T X)
                    let gx = matrix::matmul_tn(&g, x);
                    let cs = g.sum_rows();
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for j in 0..y.rows() {
                        let c = cs.data()[j];
                        for (k, dv) in d.row_mut(j).iter_mut().enumerate() {
                            *dv = 2.0 * (c * y.get(j, k) - gx.get(j, k));
                        }
                    }
                    accumulate(&mut grads[b], d);
                }
            }
        }
        grads[id] = Some(g);
    }

    let shapes = nodes[..n].iter().map(|nd| nd.value.shape()).collect();
    Ok(Gradients { grads, shapes })
}

fn repeat_rows(row: &Matrix, n: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * row.cols());
    for _ in 0..n {
        data.extend_from_slice(row.data());
    }
    Matrix::new(n, row.cols(), data).expect("shape")
}

fn repeat_cols(col: &Matrix, m: usize) -> Matrix {
    let data = col
        .data()
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, m))
        .collect();
    Matrix::new(col.rows(), m, data).expect("shape")
}

/// Returns `d root / d wrt` as a live node of the same graph, so scalars built
/// from it (e.g. a gradient penalty) can themselves be backpropagated.
///
/// Only ops whose derivatives are expressible with graph ops are supported
/// on the path from `wrt` to `root`; softmax, log-softmax and pairwise
/// distances are rejected.
pub fn input_gradient_node(root: &Tensor, wrt: &Tensor) -> Result<Tensor> {
    if root.shape() != (1, 1) {
        return Err(Error::NonScalarRoot(root.shape()));
    }
    let graph = root.graph().clone();
    if wrt.id() > root.id() {
        let (r, c) = wrt.shape();
        return graph.constant(Matrix::zeros(r, c));
    }
    let lo = wrt.id();
    let hi = root.id();

    // Nodes on some path wrt -> root.
    let (ops, relevant) = {
        let nodes = graph.nodes.borrow();
        let mut desc = vec![false; hi + 1 - lo];
        desc[0] = true;
        for id in lo + 1..=hi {
            let (ps, k) = nodes[id].op.parents();
            desc[id - lo] = ps[..k].iter().any(|&p| p >= lo && desc[p - lo]);
        }
        let mut relevant = vec![false; hi + 1 - lo];
        relevant[hi - lo] = desc[hi - lo];
        for id in (lo..=hi).rev() {
            if !relevant[id - lo] {
                continue;
            }
            let (ps, k) = nodes[id].op.parents();
            for &p in &ps[..k] {
                if p >= lo && desc[p - lo] {
                    relevant[p - lo] = true;
                }
            }
        }
        let ops: Vec<Op> = (lo..=hi).map(|id| nodes[id].op).collect();
        (ops, relevant)
    };

    if !relevant[0] {
        let (r, c) = wrt.shape();
        return graph.constant(Matrix::zeros(r, c));
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; hi + 1 - lo];
    grads[hi - lo] = Some(graph.constant(Matrix::scalar(1.0))?);

    let add_to = |slot: &mut Option<Tensor>, t: Tensor| -> Result<()> {
        *slot = Some(match slot.take() {
            Some(acc) => acc.add(&t)?,
            None => t,
        });
        Ok(())
    };

    for id in (lo + 1..=hi).rev() {
        let k = id - lo;
        if !relevant[k] {
            continue;
        }
        let Some(g) = grads[k].take() else { continue };
        let op = ops[k];
        let rel = |p: usize| p >= lo && relevant[p - lo];
        let t = |p: usize| graph.tensor(p);
        let out = graph.tensor(id);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rel(a) {
                    add_to(&mut grads[a - lo], g.matmul(&t(b).transpose()?)?)?;
                }
                if rel(b) {
                    add_to(&mut grads[b - lo], t(a).transpose()?.matmul(&g)?)?;
                }
            }
            Op::Add(a, b) => {
                if rel(a) {
                    add_to(&mut grads[a - lo], g.clone())?;
                }
                if rel(b) {
                    add_to(&mut grads[b - lo], g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if rel(a) {
                    add_to(&mut grads[a - lo], g.clone())?;
                }
                if rel(b) {
                    add_to(&mut grads[b - lo], g.neg()?)?;
                }
            }
            Op::Mul(a, b) => {
                if rel(a) {
                    add_to(&mut grads[a - lo], g.mul(&t(b))?)?;
                }
                if rel(b) {
                    add_to(&mut grads[b - lo], g.mul(&t(a))?)?;
                }
            }
            Op::AddRow(a, r) => {
                if rel(a) {
                    add_to(&mut grads[a - lo], g.clone())?;
                }
                if rel(r) {
                    add_to(&mut grads[r - lo], g.sum_rows()?)?;
                }
            }
            Op::Scale(a, c) => add_to(&mut grads[a - lo], g.scale(c)?)?,
            Op::LeakyRelu(a, s) => {
                // Piecewise-linear: the local derivative is a constant mask.
                let mask = graph
                    .value(a)
                    .map(|x| if x > 0.0 { 1.0 } else { s });
                let mask = graph.constant(mask)?;
                add_to(&mut grads[a - lo], g.mul(&mask)?)?;
            }
            Op::Sigmoid(a) => {
                let d = out.sub(&out.square()?)?;
                add_to(&mut grads[a - lo], g.mul(&d)?)?;
            }
            Op::Exp(a) => add_to(&mut grads[a - lo], g.mul(&out)?)?,
            Op::Log(a) => add_to(&mut grads[a - lo], g.mul(&t(a).recip()?)?)?,
            Op::Square(a) => add_to(&mut grads[a - lo], g.mul(&t(a))?.scale(2.0)?)?,
            Op::Sqrt(a) => {
                if graph.value(id).data().contains(&0.0) {
                    return Err(Error::UnsupportedSecondOrder("sqrt at zero"));
                }
                add_to(&mut grads[a - lo], g.mul(&out.recip()?)?.scale(0.5)?)?;
            }
            Op::Recip(a) => {
                add_to(&mut grads[a - lo], g.mul(&out.square()?)?.neg()?)?;
            }
            Op::Sum(a) => {
                let (r, c) = graph.value(a).shape();
                add_to(&mut grads[a - lo], g.broadcast_scalar(r, c)?)?;
            }
            Op::Mean(a) => {
                let (r, c) = graph.value(a).shape();
                let d = g.broadcast_scalar(r, c)?.scale(1.0 / (r * c) as f64)?;
                add_to(&mut grads[a - lo], d)?;
            }
            Op::SumRows(a) => {
                let r = graph.value(a).rows();
                add_to(&mut grads[a - lo], g.broadcast_rows(r)?)?;
            }
            Op::SumCols(a) => {
                let c = graph.value(a).cols();
                add_to(&mut grads[a - lo], g.broadcast_cols(c)?)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = graph.value(a).cols();
                let cb = graph.value(b).cols();
                if rel(a) {
                    add_to(&mut grads[a - lo], g.slice_cols(0, ca)?)?;
                }
                if rel(b) {
                    add_to(&mut grads[b - lo], g.slice_cols(ca, ca + cb)?)?;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = graph.value(a).shape();
                let mut d = g.clone();
                if start > 0 {
                    d = graph.constant(Matrix::zeros(r, start))?.concat_cols(&d)?;
                }
                if end < c {
                    d = d.concat_cols(&graph.constant(Matrix::zeros(r, c - end))?)?;
                }
                add_to(&mut grads[a - lo], d)?;
            }
            Op::Transpose(a) => add_to(&mut grads[a - lo], g.transpose()?)?,
            Op::BroadcastRows(a) => add_to(&mut grads[a - lo], g.sum_rows()?)?,
            Op::BroadcastCols(a) => add_to(&mut grads[a - lo], g.sum_cols()?)?,
            Op::BroadcastScalar(a) => add_to(&mut grads[a - lo], g.sum()?)?,
            Op::SoftmaxRows(_) | Op::LogSoftmaxRows(_) | Op::PairwiseSqDists(..) => {
                return Err(Error::UnsupportedSecondOrder(op.name()));
            }
        }
    }

    match grads[0].take() {
        Some(g) => Ok(g),
        None => {
            let (r, c) = wrt.shape();
            graph.constant(Matrix::zeros(r, c))
        }
    }
}

impl Graph {
    /// Convenience wrapper over [`backward`].
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        backward(root)
    }
}
