use std::collections::BTreeMap;

use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::{Result, Tensor, TensorError};

/// Probability clamp used by [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Stable name of a trainable tensor; gradients are reported per id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    ConcatCols(Vec<Var>),
    BroadcastRows(Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Prelu(Var, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Bce {
        p: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter leaf is reachable from this node.
    grad: bool,
}

/// Dynamic computation record for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Adds `other` into `self`, in parameter-id order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(acc) => acc.add_assign(g.data()),
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Tensor::is_finite)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::BroadcastRows(a)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Prelu(a, _)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => self.needs(*a),
            Op::Bce { p, .. } => self.needs(*p),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a trainable leaf. The same id may be recorded several times;
    /// its gradients are summed.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; n * m];
        gemm_acc(&mut out, av.data(), bv.data(), n, k, m);
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Elementwise sum. When `b` is a single row and `a` has several, `b` is
    /// added to every row (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.same_shape(bv) {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a, b)));
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let c = av.cols();
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.data()[i % c])
                .collect();
            let t = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::AddRow(a, b)));
        }
        Err(mismatch("add", av, bv))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch("sub", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a, factor))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| 1.0 - x);
        self.push(t, Op::OneMinus(a))
    }

    /// Concatenates along the column (feature) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat", self.value(first), pv));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(mismatch("broadcast_rows", av, av));
        }
        let mut data = Vec::with_capacity(n * av.cols());
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let t = Tensor::matrix(n, av.cols(), data)?;
        Ok(self.push(t, Op::BroadcastRows(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = av.data()[i * m + j];
            }
        }
        let t = Tensor::matrix(m, n, data).expect("transpose keeps size");
        self.push(t, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Parametric ReLU with a fixed negative-input slope.
    pub fn prelu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(t, Op::Prelu(a, slope))
    }

    /// Softmax over every element of `a` (use on `n x 1` or `1 x n`).
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let max = av.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = av.data().iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let t = Tensor::new(av.shape().to_vec(), exps.iter().map(|e| e / z).collect())
            .expect("same shape");
        self.push(t, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::row(vec![s]), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len().max(1) as f64;
        self.push(Tensor::row(vec![s]), Op::Mean(a))
    }

    /// Weighted binary cross-entropy summed over all elements of `p`:
    /// `-Σ w_i [y_i ln p_i + (1 - y_i) ln(1 - p_i)]`, with `p` clamped to
    /// `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if targets.len() != pv.len() || weights.len() != pv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                left: pv.shape().to_vec(),
                right: vec![targets.len(), weights.len()],
            });
        }
        let mut loss = 0.0;
        for ((&pi, &y), &w) in pv.data().iter().zip(targets).zip(weights) {
            let q = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= w * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
        }
        Ok(self.push(
            Tensor::row(vec![loss]),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// Reverse pass from a `1 x 1` root. Returns gradients for every
    /// parameter leaf reachable from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        let needs: Vec<bool> = self.nodes[..=root.0].iter().map(|n| n.grad).collect();
        fn acc(grads: &mut [Option<Vec<f64>>], needs: &[bool], v: Var, g: &[f64]) {
            if !needs[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.iter_mut().zip(g) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        let mut out = Gradients::default();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    match out.by_param.get_mut(id) {
                        Some(existing) => existing.add_assign(t.data()),
                        None => {
                            out.by_param.insert(*id, t);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if needs[a.0] {
                        let mut ga = vec![0.0; n * k];
                        gemm_nt_acc(&mut ga, &g, bv.data(), n, m, k);
                        acc(&mut grads, &needs, *a, &ga);
                    }
                    if needs[b.0] {
                        let mut gb = vec![0.0; k * m];
                        gemm_tn_acc(&mut gb, av.data(), &g, n, k, m);
                        acc(&mut grads, &needs, *b, &gb);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &needs, *a, &g);
                    acc(&mut grads, &needs, *b, &g);
                }
                Op::AddRow(a, b) => {
                    let c = self.value(*b).cols();
                    let mut gb = vec![0.0; c];
                    for (i, x) in g.iter().enumerate() {
                        gb[i % c] += x;
                    }
                    acc(&mut grads, &needs, *a, &g);
                    acc(&mut grads, &needs, *b, &gb);
                }
                Op::Sub(a, b) => {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, &needs, *a, &g);
                    acc(&mut grads, &needs, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    acc(&mut grads, &needs, *a, &ga);
                    acc(&mut grads, &needs, *b, &gb);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::OneMinus(a) => {
                    let ga: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        acc(&mut grads, &needs, *p, &gp);
                        offset += c;
                    }
                }
                Op::BroadcastRows(a) => {
                    let c = self.value(*a).cols();
                    let mut ga = vec![0.0; c];
                    for (i, x) in g.iter().enumerate() {
                        ga[i % c] += x;
                    }
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Transpose(a) => {
                    // node is m x n; input n x m
                    let (m, n) = (node.value.rows(), node.value.cols());
                    let mut ga = vec![0.0; n * m];
                    for j in 0..m {
                        for i in 0..n {
                            ga[i * m + j] = g[j * n + i];
                        }
                    }
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Prelu(a, slope) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, inp)| if *inp >= 0.0 { *x } else { x * slope })
                        .collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(x, yi)| x * yi).sum();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(x, yi)| yi * (x - dot)).collect();
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1);
                    let ga = vec![g[0] / n as f64; self.value(*a).len()];
                    acc(&mut grads, &needs, *a, &ga);
                }
                Op::Bce {
                    p,
                    targets,
                    weights,
                } => {
                    let pv = self.value(*p);
                    let ga: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&pi, &y), &w)| {
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pi) {
                                return 0.0;
                            }
                            g[0] * w * (-(y / pi) + (1.0 - y) / (1.0 - pi))
                        })
                        .collect();
                    acc(&mut grads, &needs, *p, &ga);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape, v: Var) -> f64 {
        t.value(v).data()[0]
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::row(vec![0.0]));
        let y = tape.sigmoid(x);
        let s = tape.sum(y);
        assert_eq!(scalar(&tape, s), 0.5);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data()[0], 0.25);
    }

    #[test]
    fn prelu_negative_slope() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-1.0, 2.0]));
        let y = tape.prelu(x, 0.25);
        assert_eq!(tape.value(y).data(), &[-0.25, 2.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![3.0, -1.0, 0.5, 10.0]));
        let y = tape.softmax(x);
        let total: f64 = tape.value(y).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_surface() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
        let c = tape.constant(Tensor::zeros(3, 3));
        assert!(tape.mul(a, c).is_err());
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn reused_param_accumulates() {
        let mut tape = Tape::new();
        let w = Tensor::row(vec![2.0]);
        let a = tape.param(ParamId(7), &w);
        let b = tape.param(ParamId(7), &w);
        let y = tape.mul(a, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(7)).unwrap().data()[0], 4.0);
    }

    #[test]
    fn constant_branches_do_not_change_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::matrix(2, 1, vec![1.0, -2.0]).unwrap());
        let x = tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.constant(Tensor::matrix(3, 1, vec![0.5, 0.5, 0.5]).unwrap());
        let xc = tape.tanh(x);
        let y = tape.matmul(xc, w).unwrap();
        let z = tape.add(y, c).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.len(), 1);
        let t = |v: f64| v.tanh();
        let expect = [t(1.0) + t(3.0) + t(5.0), t(2.0) + t(4.0) + t(6.0)];
        for (a, b) in g.get(ParamId(0)).unwrap().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(vec![0.5, 0.5, 0.5]));
        let l = tape.bce(p, &[1.0, 0.0, 1.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((scalar(&tape, l) - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(vec![0.0, 1.0]));
        let l = tape.bce(p, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(scalar(&tape, l).is_finite());
    }
}
