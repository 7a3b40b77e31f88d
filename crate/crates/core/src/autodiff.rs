//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only list of nodes. Each operation records its
//! operands by index, so node `i` only ever refers to nodes `< i`; the graph
//! is acyclic by construction and walking the indices backwards is a valid
//! reverse topological order. Graphs are cheap to build and are rebuilt on
//! every forward pass.
//!
//! Leaves are either differentiable ([`Graph::parameter`], [`Graph::input`])
//! or constant. A node requires a gradient when any of its operands does, and
//! backward only does work along those paths, so extracting an input gradient
//! through a network whose weights are constants never touches weight
//! gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, keyed by differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a differentiable leaf; `None` for constants and interior nodes.
    pub fn get(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor<T>> {
        self.by_leaf.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.by_leaf.iter().map(|(v, t)| (*v, t))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf (a trainable parameter).
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Differentiable leaf for model inputs. Identical to [`Graph::parameter`];
    /// the separate name keeps call sites readable.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.requires(a);
        self.push(value, Op::Scale(a.0, factor), rg)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.requires(a);
        self.push(value, Op::Sum(a.0), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    /// Adds a length-n bias vector to every row of an m×n matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let x = self.value(a);
        let b = self.value(bias);
        if x.rank() != 2 || b.rank() != 1 || x.cols() != b.len() {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let n = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(value, Op::AddBias(a.0, bias.0), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let zero = T::zero();
        let value = self.value(a).map(|x| if x > zero { x } else { zero });
        let rg = self.requires(a);
        self.push(value, Op::Relu(a.0), rg)
    }

    /// Mean over all elements of `(pred - target)²`, as a rank-0 tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        p.expect_same_shape(t, "mse_loss")?;
        if p.is_empty() {
            return Err(Error::InsufficientData("mse_loss of empty tensors".into()));
        }
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(total / T::lit(p.len() as f64));
        let rg = self.requires(pred) || self.requires(target);
        Ok(self.push(value, Op::Mse(pred.0, target.0), rg))
    }

    /// Gradients of a scalar `loss` with respect to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = self.value(loss);
        if !value.is_scalar() {
            return Err(Error::NotScalar(value.shape().to_vec()));
        }
        self.backward_with_seed(loss, Tensor::scalar(T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// to every differentiable leaf.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.value(output).expect_same_shape(&seed, "backward_with_seed")?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        if self.requires(output) {
            grads[output.0] = Some(seed);
        }

        let mut by_leaf = BTreeMap::new();
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                if matches!(node.op, Op::Leaf) {
                    by_leaf.insert(Var(idx), Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            match node.op {
                Op::Leaf => {
                    by_leaf.insert(Var(idx), g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, g.clone())?;
                    self.accumulate(&mut grads, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, b, g.map(|v| -v))?;
                    self.accumulate(&mut grads, a, g)?;
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let ga = g.zip_map(&self.nodes[b].value, "mul", |u, y| u * y)?;
                        self.accumulate(&mut grads, a, ga)?;
                    }
                    if self.nodes[b].requires_grad {
                        let gb = g.zip_map(&self.nodes[a].value, "mul", |u, x| u * x)?;
                        self.accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::Scale(a, factor) => {
                    self.accumulate(&mut grads, a, g.map(|u| u * factor))?;
                }
                Op::Sum(a) => {
                    let u = g.item()?;
                    self.accumulate(&mut grads, a, Tensor::full(self.nodes[a].value.shape(), u))?;
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let ga = g.matmul_t(&self.nodes[b].value)?;
                        self.accumulate(&mut grads, a, ga)?;
                    }
                    if self.nodes[b].requires_grad {
                        let gb = self.nodes[a].value.t_matmul(&g)?;
                        self.accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.nodes[bias].requires_grad {
                        let n = g.cols();
                        let mut gb = vec![T::zero(); n];
                        for row in g.data().chunks_exact(n) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        self.accumulate(&mut grads, bias, Tensor::vector(gb))?;
                    }
                    self.accumulate(&mut grads, a, g)?;
                }
                Op::Relu(a) => {
                    let zero = T::zero();
                    let ga = g.zip_map(&self.nodes[a].value, "relu", |u, x| {
                        if x > zero {
                            u
                        } else {
                            zero
                        }
                    })?;
                    self.accumulate(&mut grads, a, ga)?;
                }
                Op::Mse(pred, target) => {
                    let p = &self.nodes[pred].value;
                    let t = &self.nodes[target].value;
                    let coef = g.item()? * T::lit(2.0) / T::lit(p.len() as f64);
                    let diff = p.zip_map(t, "mse_loss", |x, y| (x - y) * coef)?;
                    if self.nodes[target].requires_grad {
                        self.accumulate(&mut grads, target, diff.map(|v| -v))?;
                    }
                    self.accumulate(&mut grads, pred, diff)?;
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate().skip(output.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                by_leaf.insert(Var(idx), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        target: usize,
        g: Tensor<T>,
    ) -> Result<()> {
        if !self.nodes[target].requires_grad {
            return Ok(());
        }
        grads[target] = Some(match grads[target].take() {
            None => g,
            Some(mut acc) => {
                acc.expect_same_shape(&g, "accumulate")?;
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
                acc
            }
        });
        Ok(())
    }
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    assert!(h > T::zero(), "finite-difference step must be positive");
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecf(v: &[f64]) -> Tensor<f64> {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::new();
        let x = g.input(vecf(&[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(vecf(&[-3.0, -0.5]));
        let y = g.relu(x);
        let s = g.sum(y);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_passes_upstream_gradient_exactly() {
        let mut g = Graph::new();
        let x = g.input(vecf(&[0.3, 1.7, 2.2]));
        let w = g.constant(vecf(&[0.25, -3.5, 7.125]));
        let r = g.relu(x);
        let p = g.mul(r, w).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25, -3.5, 7.125]);
        let fd = finite_diff_grad(
            |v: &[f64]| v.iter().zip([0.25, -3.5, 7.125]).map(|(a, b)| a.max(0.0) * b).sum(),
            &[0.3, 1.7, 2.2],
            1e-6,
        );
        for (a, b) in fd.iter().zip(grads.get(x).unwrap().data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn mse_values() {
        let cases: [(&[f64], &[f64], f64); 3] = [
            (&[1.0, 2.0], &[1.0, 2.0], 0.0),
            (&[0.0, 0.0], &[1.0, 1.0], 1.0),
            (&[1.0, 2.0], &[0.0, 4.0], 2.5),
        ];
        for (p, t, want) in cases {
            let mut g = Graph::new();
            let p = g.constant(vecf(p));
            let t = g.constant(vecf(t));
            let l = g.mse_loss(p, t).unwrap();
            assert_eq!(g.value(l).item().unwrap(), want);
        }
    }

    #[test]
    fn mse_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let p = g.constant(vecf(&[1.0, 2.0]));
        let t = g.constant(vecf(&[1.0]));
        assert!(matches!(g.mse_loss(p, t), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut g = Graph::new();
        let x = g.input(vecf(&[1.0, 2.0]));
        let y = g.scale(x, 2.0);
        assert!(matches!(g.backward(y), Err(Error::NotScalar(_))));
    }

    #[test]
    fn constant_graph_yields_zero_gradients() {
        let mut g = Graph::new();
        let w = g.parameter(vecf(&[1.0, 2.0]));
        let c = g.constant(vecf(&[3.0, 4.0]));
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 0.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x·x + x  →  dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.input(vecf(&[3.0]));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let s = g.sum(y);
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn linear_least_squares_gradient_matches_closed_form() {
        // loss = mse(Xw, y); ∇w = 2/n · Xᵀ(Xw − y)
        let x = Tensor::matrix(4, 3, (0..12).map(|v| ((v * 7 % 5) as f64) - 1.5).collect()).unwrap();
        let w = Tensor::matrix(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let y = Tensor::matrix(4, 1, vec![1.0, 0.0, -2.0, 3.5]).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.parameter(w.clone());
        let yv = g.constant(y.clone());
        let pred = g.matmul(xv, wv).unwrap();
        let loss = g.mse_loss(pred, yv).unwrap();
        let grads = g.backward(loss).unwrap();

        let resid = x.matmul(&w).unwrap().zip_map(&y, "sub", |a, b| a - b).unwrap();
        let closed = x.t_matmul(&resid).unwrap().map(|v| v * 2.0 / 4.0);
        for (a, b) in grads.get(wv).unwrap().data().iter().zip(closed.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn finite_diff_basics() {
        let g = finite_diff_grad(|x: &[f64]| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_: &[f64]| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_backward_is_a_vector_jacobian_product() {
        // y = x W with W 2×3; seed e_1 picks column 1 of W as dy_1/dx.
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(1, 2, vec![0.7, -0.2]).unwrap());
        let w = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.matmul(x, w).unwrap();
        let seed = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let grads = g.backward_with_seed(y, seed).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 5.0]);
    }
}
