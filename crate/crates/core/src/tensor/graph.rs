use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Powf(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    ColumnMax(Var, Vec<usize>),
    Outer(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    MeanRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Hadamard(..) => "hadamard",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::ScaleRows(..) => "scale_rows",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Powf(..) => "powf",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::ColumnMax(..) => "column_max",
            Op::Outer(..) => "outer",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::MeanRows(..) => "mean_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    label: Option<String>,
}

/// A forward tape. Nodes are appended in execution order, so every node's
/// inputs precede it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    /// A trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A trainable leaf with a name used in diagnostics.
    pub fn param_named(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].label = Some(name.into());
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// dLoss/dv after [`Graph::backward`]. Nodes off every path to the loss,
    /// and nodes that do not require gradients, get exact zeros.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    /// Element-wise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push_op(out, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    /// Adds a 1 x n row to every row of an m x n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut out = ta.clone();
        let n = ta.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % n];
        }
        Ok(self.push_op(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies row i of an m x n matrix by `scales[i]` (an m x 1 column).
    pub fn scale_rows(&mut self, a: Var, scales: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(scales));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("scale_rows", ta, ts));
        }
        let mut out = ta.clone();
        let n = ta.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= ts.data()[i / n];
        }
        Ok(self.push_op(out, Op::ScaleRows(a, scales), &[a, scales]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push_op(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push_op(out, Op::AddScalar(a), &[a])
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let out = self.value(a).map(|v| v.powf(exponent));
        self.push_op(out, Op::Powf(a, exponent), &[a])
    }

    /// max(0, x); the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_op(out, Op::Exp(a), &[a])
    }

    /// ln(1 + e^x), evaluated without overflow for large |x|.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push_op(out, Op::Softplus(a), &[a])
    }

    /// Per-column maximum of an m x n matrix as a 1 x n row, together with
    /// the winning row of each column. Ties go to the lowest row index.
    pub fn column_max(&mut self, a: Var) -> Result<(Var, Vec<usize>)> {
        let ta = self.value(a);
        if ta.rows() == 0 || ta.cols() == 0 {
            return Err(Error::Empty("column_max"));
        }
        let mut best = ta.row_slice(0).to_vec();
        let mut argmax = vec![0; ta.cols()];
        for r in 1..ta.rows() {
            for (c, &v) in ta.row_slice(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let v = self.push_op(Tensor::row(best), Op::ColumnMax(a, argmax.clone()), &[a]);
        Ok((v, argmax))
    }

    /// Outer product of two equal-length vectors (either orientation):
    /// `out[i][j] = a[i] * b[j]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_vector() || !tb.is_vector() || ta.len() != tb.len() {
            return Err(shape_err("outer", ta, tb));
        }
        let n = ta.len();
        let mut data = Vec::with_capacity(n * n);
        for &x in ta.data() {
            data.extend(tb.data().iter().map(|&y| x * y));
        }
        let out = Tensor::new(n, n, data)?;
        Ok(self.push_op(out, Op::Outer(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_op(out, Op::Transpose(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push_op(out, Op::Mean(a), &[a]))
    }

    /// Sums each row of an m x n matrix into an m x 1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::column(t.row_iter().map(|r| r.iter().sum()).collect());
        self.push_op(out, Op::RowSum(a), &[a])
    }

    /// Averages the rows of an m x n matrix into a 1 x n row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::Empty("mean_rows"));
        }
        let m = t.rows() as f64;
        let mut acc = vec![0.0; t.cols()];
        for r in t.row_iter() {
            for (s, &v) in acc.iter_mut().zip(r) {
                *s += v;
            }
        }
        acc.iter_mut().for_each(|s| *s /= m);
        Ok(self.push_op(Tensor::row(acc), Op::MeanRows(a), &[a]))
    }

    /// Reports the first node (in tape order) holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                let what = match &node.label {
                    Some(l) => format!("{} '{}'", node.op.name(), l),
                    None => node.op.name().to_string(),
                };
                return Err(Error::NonFinite { node: i, what });
            }
        }
        Ok(())
    }

    /// Reverse pass from a 1x1 loss. Runs at most once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Only keep gradients for nodes that asked for them.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.matmul(&tb.transpose()).expect("matmul backward");
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let d = ta.transpose().matmul(g).expect("matmul backward");
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip(g, tb, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip(g, ta, |x, y| x * y));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    let mut acc = vec![0.0; g.cols()];
                    for r in g.row_iter() {
                        for (s, &v) in acc.iter_mut().zip(r) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row(acc));
                }
            }
            Op::ScaleRows(a, scales) => {
                let (ta, ts) = (self.value(*a), self.value(*scales));
                let n = ta.cols();
                if self.requires_grad(*a) {
                    let mut d = g.clone();
                    for (i, v) in d.data_mut().iter_mut().enumerate() {
                        *v *= ts.data()[i / n];
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*scales) {
                    let d = g
                        .row_iter()
                        .zip(ta.row_iter())
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *scales, Tensor::column(d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Powf(a, p) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, zip(g, ta, |gv, x| gv * p * x.powf(p - 1.0)));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    zip(g, ta, |gv, x| if x > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, zip(g, out, |gv, y| gv * y * (1.0 - y)));
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip(g, out, |gv, y| gv * y)),
            Op::Softplus(a) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, zip(g, ta, |gv, x| gv * sigmoid(x)));
            }
            Op::ColumnMax(a, argmax) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for (col, &row) in argmax.iter().enumerate() {
                    d.set(row, col, g.data()[col]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Outer(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.len();
                if self.requires_grad(*a) {
                    let mut d = ta.clone();
                    for (i, v) in d.data_mut().iter_mut().enumerate() {
                        *v = (0..n).map(|j| g.get(i, j) * tb.data()[j]).sum();
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let mut d = tb.clone();
                    for (j, v) in d.data_mut().iter_mut().enumerate() {
                        *v = (0..n).map(|i| g.get(i, j) * ta.data()[i]).sum();
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let k = g.data()[0] / (r * c) as f64;
                self.accumulate(grads, *a, Tensor::filled(r, c, k));
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i / c];
                }
                self.accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i % c] / r as f64;
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = g.matmul(i, a).unwrap();
        assert_eq!(g.value(c), g.value(a));

        let s = g.constant(m(&[&[1.0, 0.0]]));
        let b = g.constant(m(&[&[2.0], &[5.0]]));
        let c = g.matmul(s, b).unwrap();
        assert_eq!(g.value(c).data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn hadamard_identity_and_zero() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.5, -2.0], &[0.25, 3.0]]));
        let ones = g.constant(Tensor::ones(2, 2));
        let zeros = g.constant(Tensor::zeros(2, 2));
        let p = g.hadamard(a, ones).unwrap();
        assert_eq!(g.value(p), g.value(a));
        let z = g.hadamard(a, zeros).unwrap();
        assert_eq!(g.value(z), &Tensor::zeros(2, 2));
        let wrong = g.constant(Tensor::zeros(1, 2));
        assert!(g.hadamard(a, wrong).is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.0, -1.0], &[2.0, 3.0]]));
        let r = g.relu(a);
        assert_eq!(g.value(r).data(), &[1.0, 0.0, 2.0, 3.0]);

        let x = g.param(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data(), &[0.5]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.25]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![0.0, 1.0]));
        let r = g.relu(x);
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn column_max_values_and_tie_break() {
        let mut g = Graph::new();
        let a = g.param(m(&[&[0.1, 0.9, 0.5], &[0.4, 0.2, 0.7]]));
        let (mx, arg) = g.column_max(a).unwrap();
        assert_eq!(g.value(mx).data(), &[0.4, 0.9, 0.7]);
        assert_eq!(arg, vec![1, 0, 1]);

        let mut g = Graph::new();
        let a = g.param(m(&[&[0.5], &[0.5]]));
        let (mx, _) = g.column_max(a).unwrap();
        let l = g.sum(mx);
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, 0.0]);

        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros(0, 3));
        assert!(matches!(g.column_max(e), Err(Error::Empty(_))));
    }

    #[test]
    fn outer_basis_and_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![1.0, 0.0]));
        let o = g.outer(a, a).unwrap();
        assert_eq!(g.value(o).data(), &[1.0, 0.0, 0.0, 0.0]);
        let b = g.constant(Tensor::row(vec![1.0, 0.0, 2.0]));
        assert!(g.outer(a, b).is_err());
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![0.3, -1.0, 7.0]));
        let l = g.sum(w);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        let sq = g.hadamard(w, w).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss((1, 2)))));
        let l = g.sum(w);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::BackwardTwice)));
    }

    #[test]
    fn off_path_gradients_are_zero() {
        let mut g = Graph::new();
        let used = g.param(Tensor::row(vec![1.0, 2.0]));
        let unused = g.param(Tensor::row(vec![3.0, 4.0]));
        let _dangling = g.exp(unused);
        let c = g.constant(Tensor::row(vec![5.0, 6.0]));
        let l = g.sum(used);
        g.backward(l).unwrap();
        assert_eq!(g.grad(unused), Tensor::zeros(1, 2));
        assert_eq!(g.grad(c), Tensor::zeros(1, 2));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn check_finite_names_first_bad_node() {
        let mut g = Graph::new();
        let w = g.param_named("w", Tensor::row(vec![1.0, f64::NAN]));
        let _ = g.exp(w);
        match g.check_finite() {
            Err(Error::NonFinite { node, what }) => {
                assert_eq!(node, 0);
                assert!(what.contains("'w'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    mod finite_differences {
        use super::*;
        use crate::tensor::grad_check;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        #[derive(Clone, Copy, Debug)]
        enum Op {
            Matmul,
            Hadamard,
            Relu,
            Sigmoid,
            ColumnMax,
            Outer,
        }

        /// Entries bounded away from zero and pairwise at least `gap` apart,
        /// so no relu kink or max tie sits inside the difference stencil.
        fn spread(rng: &mut ChaCha8Rng, r: usize, c: usize, gap: f64) -> Tensor {
            let n = r * c;
            let mut vals: Vec<f64> = (0..n)
                .map(|k| (k as f64 + 0.5) * gap * 4.0 - n as f64 * gap * 2.0)
                .collect();
            for i in (1..n).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let vals = vals
                .into_iter()
                .map(|v| v + rng.gen_range(-gap..gap))
                .collect();
            Tensor::new(r, c, vals).unwrap()
        }

        fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
            Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        }

        fn check(op: Op, seed: u64, r: usize, k: usize, c: usize) -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, other) = match op {
                Op::Matmul => (uniform(&mut rng, r, k), uniform(&mut rng, k, c)),
                Op::Hadamard => (uniform(&mut rng, r, c), uniform(&mut rng, r, c)),
                Op::Relu | Op::ColumnMax => (spread(&mut rng, r, c, 0.05), Tensor::zeros(1, 1)),
                Op::Sigmoid => (
                    uniform(&mut rng, r, c).map(|v| 4.0 * v),
                    Tensor::zeros(1, 1),
                ),
                Op::Outer => (uniform(&mut rng, 1, c), uniform(&mut rng, 1, c)),
            };
            let out_shape = match op {
                Op::Matmul => (r, c),
                Op::ColumnMax => (1, c),
                Op::Outer => (c, c),
                _ => x.shape(),
            };
            let weights = uniform(&mut rng, out_shape.0, out_shape.1);
            let report = grad_check(
                |g, v| {
                    let o = g.constant(other.clone());
                    let y = match op {
                        Op::Matmul => g.matmul(v, o)?,
                        Op::Hadamard => g.hadamard(v, o)?,
                        Op::Relu => g.relu(v),
                        Op::Sigmoid => g.sigmoid(v),
                        Op::ColumnMax => g.column_max(v)?.0,
                        Op::Outer => g.outer(v, o)?,
                    };
                    let w = g.constant(weights.clone());
                    let wy = g.hadamard(w, y)?;
                    Ok(g.sum(wy))
                },
                &x,
                1e-5,
                1e-4,
            )
            .unwrap();
            report.max_rel_err
        }

        proptest! {
            #![proptest_config(ProptestConfig {
                cases: 100,
                failure_persistence: None,
                ..ProptestConfig::default()
            })]

            #[test]
            fn backward_matches_differences(
                op in prop::sample::select(vec![
                    Op::Matmul, Op::Hadamard, Op::Relu, Op::Sigmoid, Op::ColumnMax, Op::Outer,
                ]),
                seed in any::<u64>(),
                r in 1usize..5,
                k in 1usize..5,
                c in 1usize..5,
            ) {
                let err = check(op, seed, r, k, c);
                prop_assert!(err < 1e-4, "{:?} {}x{}x{}: rel err {}", op, r, k, c, err);
            }
        }
    }
}
