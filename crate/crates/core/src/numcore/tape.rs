//! Reverse-mode gradient tape.
//!
//! Every op appends a node holding its forward value and whatever it needs for
//! the backward sweep. `backward` visits the nodes in reverse insertion order
//! exactly once and accumulates parameter gradients into a [`ParamStore`].

use std::collections::HashMap;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numcore::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, log_sum_exp};
use crate::numcore::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, S),
    Unary(Unary, Var),
    Concat(Vec<Var>, usize),
    Column(Var, usize),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    SumAll(Var),
    /// Local gradient with respect to the logits, computed during the forward pass.
    MarginalNll(Var, Tensor<S>),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// One marginalized negative log-likelihood row: the rows' gold action set and weight.
#[derive(Clone, Debug)]
pub struct NllRow {
    pub gold: Vec<usize>,
    pub weight: f64,
}

/// Probability floor applied before taking the log of a gold marginal.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
    underflows: usize,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            underflows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of loss rows whose gold probability fell below [`PROB_FLOOR`].
    pub fn underflows(&self) -> usize {
        self.underflows
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Snapshot of a parameter. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        if k != k2 || av.rank() > 2 || bv.rank() > 2 {
            return Err(shape_err(
                "matmul",
                format!(
                    "{:?} · {:?}: inner dimensions {} and {} differ",
                    av.shape(),
                    bv.shape(),
                    k,
                    k2
                ),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise op on equal shapes, or `m × n` with a `1 × n` row broadcast as `b`.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.same_shape(bv) {
            false
        } else if bv.rows() == 1 && bv.cols() == av.cols() && av.rank() <= 2 && bv.rank() <= 2 {
            true
        } else {
            return Err(shape_err(
                "elementwise",
                format!("incompatible shapes {:?} and {:?}", av.shape(), bv.shape()),
            ));
        };
        let n = av.cols();
        let f = |x: S, y: S| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<S> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { bv.data()[i % n] } else { bv.data()[i] };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Multiplies row `i` of `x` (`m × n`) by `w[i]` (`w` is `m × 1`).
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.len() != xv.rows() || xv.rank() > 2 {
            return Err(shape_err(
                "scale_rows",
                format!("{:?} scaled by {:?}", xv.shape(), wv.shape()),
            ));
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wv.data()[i / n])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::ScaleRows(x, w), rg))
    }

    /// `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: S, offset: S) -> Var {
        let value = self.value(x).map(|v| scale * v + offset);
        let rg = self.rg(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Var {
        let value = match op {
            Unary::Tanh => self.value(x).map(|v| v.tanh()),
            Unary::Sigmoid => self.value(x).map(sigmoid),
        };
        let rg = self.rg(x);
        self.push(value, Op::Unary(op, x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let rank = self.value(*first).rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        let base = self.value(*first).shape().to_vec();
        let mut axis_total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != rank || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(shape_err(
                    "concat",
                    format!("{:?} does not align with {:?} on axis {}", s, base, axis),
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Column `col` of a matrix as an `m × 1` tensor.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let xv = self.value(x);
        if col >= xv.cols() {
            return Err(shape_err("column", format!("column {} of {:?}", col, xv.shape())));
        }
        let m = xv.rows();
        let data = (0..m).map(|r| xv.get(r, col)).collect();
        let value = Tensor::matrix(m, 1, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Column(x, col), rg))
    }

    /// Row-wise softmax. `valid`, when given, is row-major with the same number
    /// of entries as `x`; invalid positions get probability zero.
    pub fn softmax(&mut self, x: Var, valid: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if let Some(mask) = valid {
            if mask.len() != xv.len() {
                return Err(shape_err(
                    "softmax",
                    format!("mask of {} entries for {:?}", mask.len(), xv.shape()),
                ));
            }
        }
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let row_mask = valid.map(|m| &m[r * n..(r + 1) * n]);
            data.extend(super::tensor::masked_softmax(xv.row(r), row_mask)?);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::UnknownId { id, size: v });
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::matrix(ids.len(), d, data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::vector(vec![s]), Op::SumAll(x), rg)
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the rest by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - p));
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let mask: Vec<S> = (0..n)
            .map(|_| if rng.random::<f64>() < p { S::zero() } else { keep })
            .collect();
        let m = self.leaf(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Sum over rows of `weight · (−log Σ_{a∈gold} softmax(logits)_a)`.
    ///
    /// Softmax is taken over the positions where `valid` is true. Rows with zero
    /// weight are ignored and may have an empty gold set.
    pub fn marginal_nll(&mut self, logits: Var, valid: &[bool], rows: &[NllRow]) -> Result<Var> {
        let lv = self.value(logits);
        let (m, n) = (lv.rows(), lv.cols());
        if rows.len() != m || valid.len() != lv.len() {
            return Err(shape_err(
                "marginal_nll",
                format!(
                    "{} gold rows and {} mask entries for logits {:?}",
                    rows.len(),
                    valid.len(),
                    lv.shape()
                ),
            ));
        }
        let floor = S::lit(PROB_FLOOR.ln());
        let mut total = S::zero();
        let mut grad = vec![S::zero(); m * n];
        let mut underflows = 0;
        for (r, row) in rows.iter().enumerate() {
            if row.weight == 0.0 {
                continue;
            }
            let w = S::lit(row.weight);
            let x = lv.row(r);
            let mask = &valid[r * n..(r + 1) * n];
            if row.gold.is_empty() {
                return Err(Error::Config(format!("row {r}: empty gold action set")));
            }
            if let Some(&bad) = row.gold.iter().find(|&&g| g >= n || !mask[g]) {
                return Err(Error::Config(format!(
                    "row {r}: gold action {bad} is outside the valid action space"
                )));
            }
            let all = (0..n).filter(|&i| mask[i]);
            let lse_all = log_sum_exp(x, all);
            let lse_gold = log_sum_exp(x, row.gold.iter().copied());
            let log_marginal = lse_gold - lse_all;
            if log_marginal < floor {
                underflows += 1;
                total += -w * floor;
                continue;
            }
            total += -w * log_marginal;
            let g = &mut grad[r * n..(r + 1) * n];
            for i in 0..n {
                if mask[i] {
                    g[i] = w * (x[i] - lse_all).exp();
                }
            }
            let mut seen = Vec::with_capacity(row.gold.len());
            for &a in &row.gold {
                if seen.contains(&a) {
                    continue;
                }
                seen.push(a);
                g[a] -= w * (x[a] - lse_gold).exp();
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("marginal_nll".into()));
        }
        self.underflows += underflows;
        let local = Tensor::matrix(m, n, grad)?;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::vector(vec![total]), Op::MarginalNll(logits, local), rg))
    }

    /// Propagates d(loss)/d(node) back through the tape and adds parameter
    /// gradients into `store`. `loss` must hold a single value.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be a scalar, got {:?}", lv.shape()),
            ));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(lv.shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    p.grad.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.rg(*a) {
                        let mut da = vec![S::zero(); m * k];
                        gemm_nt_acc(g.data(), bv.data(), &mut da, m, n, k);
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![S::zero(); k * n];
                        gemm_tn_acc(av.data(), g.data(), &mut db, m, k, n);
                        accumulate(&mut grads, *b, bv.shape(), db);
                    }
                }
                Op::Binary(op, a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let broadcast = !av.same_shape(bv);
                    let n = av.cols();
                    let bval = |i: usize| if broadcast { bv.data()[i % n] } else { bv.data()[i] };
                    if self.rg(*a) {
                        let da = match op {
                            Binary::Add | Binary::Sub => g.data().to_vec(),
                            Binary::Mul => g.data().iter().enumerate().map(|(i, &x)| x * bval(i)).collect(),
                        };
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![S::zero(); bv.len()];
                        for (i, &gi) in g.data().iter().enumerate() {
                            let j = if broadcast { i % n } else { i };
                            db[j] += match op {
                                Binary::Add => gi,
                                Binary::Sub => -gi,
                                Binary::Mul => gi * av.data()[i],
                            };
                        }
                        accumulate(&mut grads, *b, bv.shape(), db);
                    }
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let n = xv.cols();
                    if self.rg(*x) {
                        let dx = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * wv.data()[i / n])
                            .collect();
                        accumulate(&mut grads, *x, xv.shape(), dx);
                    }
                    if self.rg(*w) {
                        let mut dw = vec![S::zero(); wv.len()];
                        for (i, (&gi, &xi)) in g.data().iter().zip(xv.data()).enumerate() {
                            dw[i / n] += gi * xi;
                        }
                        accumulate(&mut grads, *w, wv.shape(), dw);
                    }
                }
                Op::Affine(x, scale) => {
                    let dx = g.data().iter().map(|&gi| gi * *scale).collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), dx);
                }
                Op::Unary(op, x) => {
                    let y = &node.value;
                    let dx = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gi, &yi)| match op {
                            Unary::Tanh => gi * (S::one() - yi * yi),
                            Unary::Sigmoid => gi * yi * (S::one() - yi),
                        })
                        .collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), dx);
                }
                Op::Concat(parts, axis) => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * inner;
                    let mut offset = 0;
                    for p in parts {
                        let ps = self.value(*p).shape().to_vec();
                        let chunk = ps[*axis] * inner;
                        if self.rg(*p) {
                            let mut dp = Vec::with_capacity(outer * chunk);
                            for o in 0..outer {
                                let start = o * row + offset;
                                dp.extend_from_slice(&g.data()[start..start + chunk]);
                            }
                            accumulate(&mut grads, *p, &ps, dp);
                        }
                        offset += chunk;
                    }
                }
                Op::Column(x, col) => {
                    let xv = self.value(*x);
                    let n = xv.cols();
                    let mut dx = vec![S::zero(); xv.len()];
                    for (r, &gi) in g.data().iter().enumerate() {
                        dx[r * n + col] = gi;
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut dx = vec![S::zero(); y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for i in 0..n {
                            dx[r * n + i] = yr[i] * (gr[i] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, self.value(*x).shape(), dx);
                }
                Op::Gather(table, ids) => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut dt = vec![S::zero(); tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g.data()[r * d + c];
                        }
                    }
                    accumulate(&mut grads, *table, tv.shape(), dt);
                }
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    let gi = g.scalar();
                    accumulate(&mut grads, *x, xv.shape(), vec![gi; xv.len()]);
                }
                Op::MarginalNll(x, local) => {
                    let gi = g.scalar();
                    let dx = local.data().iter().map(|&l| l * gi).collect();
                    accumulate(&mut grads, *x, local.shape(), dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, shape: &[usize], data: Vec<S>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values.iter().map(|(n, t)| store.add(*n, t.clone()).unwrap()).collect();
        (store, ids)
    }

    #[test]
    fn tanh_and_sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let t = tape.tanh(x);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(t).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn concat_vectors_and_gradient_of_sum_is_ones() {
        let (mut store, ids) = store_with(&[("a", Tensor::vector(vec![1.0, 2.0])), ("b", Tensor::vector(vec![3.0]))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, ids[0]);
        let b = tape.param(&store, ids[1]);
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = tape.sum_all(c);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get(ids[1]).grad.data(), &[1.0]);
    }

    #[test]
    fn concat_rejects_bad_axis() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(tape.concat(&[a, a], 1), Err(Error::Axis { axis: 1, rank: 1 })));
    }

    #[test]
    fn elementwise_rejects_incompatible_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.add(a, b).is_err());
        let row = tape.leaf(Tensor::zeros(&[1, 3]));
        assert!(tape.add(a, row).is_ok());
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let t = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.gather(t, &[3]), Err(Error::UnknownId { id: 3, size: 3 })));
    }

    #[test]
    fn marginal_nll_uniform_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 5]));
        let one = tape
            .marginal_nll(
                x,
                &[true; 5],
                &[NllRow {
                    gold: vec![2],
                    weight: 1.0,
                }],
            )
            .unwrap();
        assert!((tape.value(one).scalar() + 0.2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn marginal_nll_floor_is_flagged() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_rows(&[&[0.0, -500.0]]));
        let l = tape
            .marginal_nll(
                x,
                &[true, true],
                &[NllRow {
                    gold: vec![1],
                    weight: 1.0,
                }],
            )
            .unwrap();
        assert_eq!(tape.underflows(), 1);
        assert!((tape.value(l).scalar() + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn backward_does_not_touch_forward_values() {
        let (mut store, ids) = store_with(&[("w", Tensor::from_rows(&[&[0.3, -0.2], &[0.1, 0.7]]))]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0]]));
        let w = tape.param(&store, ids[0]);
        let y = tape.matmul(x, w).unwrap();
        let t = tape.tanh(y);
        let s = tape.sum_all(t);
        let before: Vec<Vec<f64>> = (0..tape.len()).map(|i| tape.nodes[i].value.data().to_vec()).collect();
        tape.backward(s, &mut store).unwrap();
        let after: Vec<Vec<f64>> = (0..tape.len()).map(|i| tape.nodes[i].value.data().to_vec()).collect();
        assert_eq!(before, after);
    }
}
