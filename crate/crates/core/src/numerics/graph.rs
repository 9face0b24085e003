//! Reverse-mode autodiff over a recorded tape of tensor operations.
//!
//! A forward pass builds the graph by calling the typed builder methods;
//! `backward` replays it in reverse and accumulates gradients into the
//! `ParamSet` slots referenced by `param` leaves.

use super::ops;
use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Input,
    Param { slot: usize },
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale(S),
    Relu,
    Abs,
    SoftmaxRows,
    LayerNormRows { eps: S },
    Conv1dSame,
    GatherRows(Vec<usize>),
    ConcatRows,
    ConcatCols,
    SliceCols { start: usize },
    RowSum,
    SumAll,
    MeanAll,
    CeFromLogits {
        labels: Vec<usize>,
        weights: Vec<S>,
        mask: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    parents: Vec<NodeId>,
    op: Op<S>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, parents: Vec<NodeId>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, parents, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, vec![], Op::Input)
    }

    /// Leaf backed by a `ParamSet` slot; gradients accumulate there.
    pub fn param(&mut self, params: &ParamSet<S>, slot: usize) -> NodeId {
        self.push(params.by_slot(slot).value.clone(), vec![], Op::Param { slot })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::Matmul))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = ops::transpose(self.value(a));
        self.push(v, vec![a], Op::Transpose)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::Add))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::Sub))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::Mul))
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add_row(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::AddRow))
    }

    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul_row(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Op::MulRow))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = ops::scale(self.value(a), c);
        self.push(v, vec![a], Op::Scale(c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = ops::relu(self.value(a));
        self.push(v, vec![a], Op::Relu)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = ops::abs(self.value(a));
        self.push(v, vec![a], Op::Abs)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = ops::softmax(self.value(a));
        self.push(v, vec![a], Op::SoftmaxRows)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId, eps: S) -> NodeId {
        let v = ops::layer_norm_rows(self.value(a), eps);
        self.push(v, vec![a], Op::LayerNormRows { eps })
    }

    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::conv1d_same(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, vec![x, w, b], Op::Conv1dSame))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let v = ops::gather_rows(self.value(a), &indices)?;
        Ok(self.push(v, vec![a], Op::GatherRows(indices)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_rows(&tensors)?;
        Ok(self.push(v, parts.to_vec(), Op::ConcatRows))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_cols(&tensors)?;
        Ok(self.push(v, parts.to_vec(), Op::ConcatCols))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = ops::slice_cols(self.value(a), start, end)?;
        Ok(self.push(v, vec![a], Op::SliceCols { start }))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = ops::row_sum(self.value(a));
        self.push(v, vec![a], Op::RowSum)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = ops::sum_all(self.value(a));
        self.push(v, vec![a], Op::SumAll)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = ops::mean_all(self.value(a));
        self.push(v, vec![a], Op::MeanAll)
    }

    pub fn ce_from_logits(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
        weights: Vec<S>,
        mask: Vec<bool>,
    ) -> Result<NodeId> {
        let loss = ops::ce_from_logits(self.value(logits), &labels, &weights, &mask)?;
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Op::CeFromLogits {
                labels,
                weights,
                mask,
            },
        ))
    }

    /// Reverse pass from `loss`; gradients sum into `params.grad` for every
    /// parameter leaf reached. Calling twice without zeroing doubles them.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<S>) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward requested before a forward pass built the graph".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::State(format!(
                "backward source must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param { slot } => params.accumulate_grad(*slot, &grad),
                Op::Matmul => {
                    let a = &self.nodes[node.parents[0].0].value;
                    let b = &self.nodes[node.parents[1].0].value;
                    let da = ops::matmul(&grad, &ops::transpose(b))?;
                    let db = ops::matmul(&ops::transpose(a), &grad)?;
                    accumulate(&mut grads, node.parents[0], da);
                    accumulate(&mut grads, node.parents[1], db);
                }
                Op::Transpose => {
                    accumulate(&mut grads, node.parents[0], ops::transpose(&grad));
                }
                Op::Add => {
                    accumulate(&mut grads, node.parents[0], grad.clone());
                    accumulate(&mut grads, node.parents[1], grad);
                }
                Op::Sub => {
                    accumulate(&mut grads, node.parents[0], grad.clone());
                    accumulate(&mut grads, node.parents[1], ops::scale(&grad, -S::one()));
                }
                Op::Mul => {
                    let a = &self.nodes[node.parents[0].0].value;
                    let b = &self.nodes[node.parents[1].0].value;
                    accumulate(&mut grads, node.parents[0], ops::mul(&grad, b)?);
                    accumulate(&mut grads, node.parents[1], ops::mul(&grad, a)?);
                }
                Op::AddRow => {
                    accumulate(&mut grads, node.parents[0], grad.clone());
                    accumulate(&mut grads, node.parents[1], col_sums(&grad));
                }
                Op::MulRow => {
                    let a = &self.nodes[node.parents[0].0].value;
                    let b = &self.nodes[node.parents[1].0].value;
                    accumulate(&mut grads, node.parents[0], ops::mul_row(&grad, b)?);
                    accumulate(&mut grads, node.parents[1], col_sums(&ops::mul(&grad, a)?));
                }
                Op::Scale(c) => {
                    accumulate(&mut grads, node.parents[0], ops::scale(&grad, *c));
                }
                Op::Relu => {
                    let x = &self.nodes[node.parents[0].0].value;
                    let mut dx = grad;
                    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= S::zero() {
                            *g = S::zero();
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::Abs => {
                    let x = &self.nodes[node.parents[0].0].value;
                    let mut dx = grad;
                    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v < S::zero() {
                            *g = -*g;
                        } else if v == S::zero() {
                            *g = S::zero();
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::SoftmaxRows => {
                    let s = &node.value;
                    let k = *s.shape().last().unwrap();
                    let mut dx = Tensor::zeros(s.shape());
                    if k > 0 {
                        for (chunk, (schunk, dchunk)) in dx
                            .data_mut()
                            .chunks_mut(k)
                            .zip(s.data().chunks(k).zip(grad.data().chunks(k)))
                        {
                            let dot = schunk
                                .iter()
                                .zip(dchunk)
                                .map(|(&sv, &dv)| sv * dv)
                                .fold(S::zero(), |acc, v| acc + v);
                            for j in 0..k {
                                chunk[j] = schunk[j] * (dchunk[j] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::LayerNormRows { eps } => {
                    let x = &self.nodes[node.parents[0].0].value;
                    let y = &node.value;
                    let (m, n) = (x.rows(), x.cols());
                    let mut dx = Tensor::zeros(&[m, n]);
                    if n > 0 {
                        let inv_n = S::one() / S::from_f64(n as f64);
                        for r in 0..m {
                            let xrow = x.row(r);
                            let yrow = y.row(r);
                            let drow = grad.row(r);
                            let mean = xrow.iter().cloned().fold(S::zero(), |s, v| s + v) * inv_n;
                            let var = xrow
                                .iter()
                                .map(|&v| (v - mean) * (v - mean))
                                .fold(S::zero(), |s, v| s + v)
                                * inv_n;
                            let inv_std = S::one() / (var + *eps).sqrt();
                            let dmean = drow.iter().cloned().fold(S::zero(), |s, v| s + v) * inv_n;
                            let dydot = drow
                                .iter()
                                .zip(yrow)
                                .map(|(&d, &yv)| d * yv)
                                .fold(S::zero(), |s, v| s + v)
                                * inv_n;
                            for j in 0..n {
                                dx.set(r, j, inv_std * (drow[j] - dmean - yrow[j] * dydot));
                            }
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::Conv1dSame => {
                    let x = &self.nodes[node.parents[0].0].value;
                    let w = &self.nodes[node.parents[1].0].value;
                    let (ch_out, ch_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                    let len = x.rows();
                    let pad = (k - 1) / 2;
                    let mut dx = Tensor::zeros(x.shape());
                    let mut dw = Tensor::zeros(w.shape());
                    let mut db = Tensor::zeros(&[1, ch_out]);
                    for t in 0..len {
                        for o in 0..ch_out {
                            let g = grad.at(t, o);
                            if g == S::zero() {
                                continue;
                            }
                            db.data_mut()[o] = db.data()[o] + g;
                            for j in 0..k {
                                let s = t + j;
                                if s < pad || s - pad >= len {
                                    continue;
                                }
                                let s = s - pad;
                                for c in 0..ch_in {
                                    let xi = x.at(s, c);
                                    let wi = w.data()[o * ch_in * k + c * k + j];
                                    dx.data_mut()[s * ch_in + c] =
                                        dx.data()[s * ch_in + c] + g * wi;
                                    dw.data_mut()[o * ch_in * k + c * k + j] =
                                        dw.data()[o * ch_in * k + c * k + j] + g * xi;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                    accumulate(&mut grads, node.parents[1], dw);
                    accumulate(&mut grads, node.parents[2], db);
                }
                Op::GatherRows(indices) => {
                    let src = &self.nodes[node.parents[0].0].value;
                    let n = src.cols();
                    let mut dx = Tensor::zeros(src.shape());
                    for (r, &i) in indices.iter().enumerate() {
                        let grow = grad.row(r);
                        let drow = &mut dx.data_mut()[i * n..(i + 1) * n];
                        for j in 0..n {
                            drow[j] = drow[j] + grow[j];
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::ConcatRows => {
                    let mut at = 0;
                    for &p in &node.parents {
                        let rows = self.nodes[p.0].value.rows();
                        let n = self.nodes[p.0].value.cols();
                        let mut dp = Tensor::zeros(&[rows, n]);
                        dp.data_mut()
                            .copy_from_slice(&grad.data()[at * n..(at + rows) * n]);
                        accumulate(&mut grads, p, dp);
                        at += rows;
                    }
                }
                Op::ConcatCols => {
                    let m = node.value.rows();
                    let mut at = 0;
                    for &p in &node.parents {
                        let cols = self.nodes[p.0].value.cols();
                        let mut dp = Tensor::zeros(&[m, cols]);
                        for i in 0..m {
                            for j in 0..cols {
                                let v = grad.at(i, at + j);
                                dp.set(i, j, v);
                            }
                        }
                        accumulate(&mut grads, p, dp);
                        at += cols;
                    }
                }
                Op::SliceCols { start } => {
                    let src = &self.nodes[node.parents[0].0].value;
                    let mut dx = Tensor::zeros(src.shape());
                    for i in 0..grad.rows() {
                        for j in 0..grad.cols() {
                            let v = grad.at(i, j);
                            dx.set(i, start + j, v);
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::RowSum => {
                    let src = &self.nodes[node.parents[0].0].value;
                    let mut dx = Tensor::zeros(src.shape());
                    for i in 0..src.rows() {
                        let g = grad.at(i, 0);
                        for j in 0..src.cols() {
                            dx.set(i, j, g);
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dx);
                }
                Op::SumAll => {
                    let src = &self.nodes[node.parents[0].0].value;
                    accumulate(
                        &mut grads,
                        node.parents[0],
                        Tensor::full(src.shape(), grad.item()),
                    );
                }
                Op::MeanAll => {
                    let src = &self.nodes[node.parents[0].0].value;
                    if src.numel() > 0 {
                        let g = grad.item() / S::from_f64(src.numel() as f64);
                        accumulate(&mut grads, node.parents[0], Tensor::full(src.shape(), g));
                    }
                }
                Op::CeFromLogits {
                    labels,
                    weights,
                    mask,
                } => {
                    let logits = &self.nodes[node.parents[0].0].value;
                    let probs = ops::softmax(logits);
                    let count = mask.iter().filter(|&&m| m).count();
                    let mut dz = Tensor::zeros(logits.shape());
                    if count > 0 {
                        let g = grad.item() / S::from_f64(count as f64);
                        let k = logits.cols();
                        for (i, (&label, &m)) in labels.iter().zip(mask).enumerate() {
                            if !m {
                                continue;
                            }
                            let wl = weights[label];
                            for j in 0..k {
                                let delta = if j == label { S::one() } else { S::zero() };
                                dz.set(i, j, g * wl * (probs.at(i, j) - delta));
                            }
                        }
                    }
                    accumulate(&mut grads, node.parents[0], dz);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], id: NodeId, delta: Tensor<S>) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Column sums of a [m×n] tensor as [1×n].
fn col_sums<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[1, n]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[j] = out.data()[j] + a.at(i, j);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_on_empty_graph_is_state_error() {
        let g = Graph::<f64>::new();
        let mut ps = ParamSet::new();
        assert!(matches!(
            g.backward(NodeId(0), &mut ps),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 2]));
        let mut ps = ParamSet::new();
        assert!(matches!(g.backward(x, &mut ps), Err(Error::State(_))));
    }

    #[test]
    fn grad_of_sum_w_x_matches_x_structure() {
        // loss = sum(W·x), x fixed → dL/dW[i][j] = x[j]
        let mut ps = ParamSet::<f64>::new();
        let w = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let slot = ps.register("w", w).unwrap();
        let mut g = Graph::new();
        let wn = g.param(&ps, slot);
        let x = g.input(Tensor::from_rows(&[vec![3.0], vec![-2.0]]).unwrap());
        let y = g.matmul(wn, x).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss, &mut ps).unwrap();
        let grad = &ps.get("w").unwrap().grad;
        assert_eq!(grad.at(0, 0), 3.0);
        assert_eq!(grad.at(0, 1), -2.0);
        assert_eq!(grad.at(1, 0), 3.0);
        assert_eq!(grad.at(1, 1), -2.0);
    }

    #[test]
    fn unreached_parameter_has_zero_grad() {
        let mut ps = ParamSet::<f64>::new();
        let used = ps.register("used", Tensor::scalar(2.0)).unwrap();
        ps.register("unused", Tensor::scalar(5.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&ps, used);
        let loss = g.sum_all(a);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("unused").unwrap().grad.item(), 0.0);
        assert_eq!(ps.get("used").unwrap().grad.item(), 1.0);
    }

    #[test]
    fn double_backward_doubles_grads() {
        let mut ps = ParamSet::<f64>::new();
        let slot = ps.register("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&ps, slot);
        let b = g.mul(a, a).unwrap();
        let loss = g.sum_all(b);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("w").unwrap().grad.item(), 4.0);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("w").unwrap().grad.item(), 8.0);
    }
}
