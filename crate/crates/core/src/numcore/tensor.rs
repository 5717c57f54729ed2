use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Rank-1 tensors of length `n` behave as a single `1 × n` row in the matrix
/// operations.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {:?} holds {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(values: Vec<S>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from `f64` rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().map(|&x| S::lit(x))).collect();
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        if hi <= lo {
            return Self::filled(shape, S::lit(lo));
        }
        let data = (0..n).map(|_| S::lit(rng.random_range(lo..hi))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Column count when viewed as a matrix.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[S] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Single value of a one-element tensor.
    pub fn scalar(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts every element through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::lit(x.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn same_shape(&self, other: &Tensor<S>) -> bool {
        self.shape == other.shape
    }
}

/// `c = a · b`, accumulating into `out` (`m × n`).
pub(crate) fn gemm_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` where `a` is `m × n`, `b` is `k × n`, `out` is `m × k`.
pub(crate) fn gemm_nt_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out += aᵀ · g` where `a` is `m × k`, `g` is `m × n`, `out` is `k × n`.
pub(crate) fn gemm_tn_acc<S: Scalar>(a: &[S], g: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// Plain matrix product without recording anything.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 || b.rank() > 2 {
        return Err(shape_err(
            "matmul",
            format!(
                "{:?} · {:?}: inner dimensions {} and {} differ",
                a.shape(),
                b.shape(),
                k,
                k2
            ),
        ));
    }
    let mut out = vec![S::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::matrix(m, n, out)
}

/// Numerically stable softmax over `x`, restricted to positions where `valid`
/// is true. Masked positions get exactly zero.
pub fn masked_softmax<S: Scalar>(x: &[S], valid: Option<&[bool]>) -> Result<Vec<S>> {
    if let Some(v) = valid {
        if v.len() != x.len() {
            return Err(shape_err(
                "softmax",
                format!("mask length {} for {} logits", v.len(), x.len()),
            ));
        }
    }
    let keep = |i: usize| valid.is_none_or(|v| v[i]);
    let max = (0..x.len())
        .filter(|&i| keep(i))
        .map(|i| x[i])
        .fold(None, |acc: Option<S>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(Error::AllMasked { op: "softmax" })?;
    let mut out: Vec<S> = (0..x.len())
        .map(|i| if keep(i) { (x[i] - max).exp() } else { S::zero() })
        .collect();
    let total: S = out.iter().copied().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// `log Σ exp(x_i)` over the selected indices.
pub(crate) fn log_sum_exp<S: Scalar>(x: &[S], idx: impl Iterator<Item = usize> + Clone) -> S {
    let max = idx.clone().map(|i| x[i]).fold(S::neg_infinity(), |a, b| a.max(b));
    if max == S::neg_infinity() {
        return max;
    }
    let s: S = idx.map(|i| (x[i] - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Tensor::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn zero_matmul() {
        let a = Tensor::<f64>::from_rows(&[&[2.0]]);
        let b = Tensor::from_rows(&[&[0.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("inner dimensions 3 and 2"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        let p = masked_softmax(&[2.5f64, 2.5, 2.5], None).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(masked_softmax(&[-7.0f64], None).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_large_gap_does_not_overflow() {
        // exp(0 - 1000) / (1 + exp(-1000)) underflows to 0; exp(-1000) is below f64's range.
        let p = masked_softmax(&[1000.0f64, 0.0], None).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        assert!(p.iter().all(|x| x.is_finite()));
        let q = masked_softmax(&[30.0f64, 0.0], None).unwrap();
        let expect = (-30.0f64).exp() / (1.0 + (-30.0f64).exp());
        assert!((q[1] - expect).abs() < 1e-25);
    }

    #[test]
    fn softmax_masks_and_rejects_all_masked() {
        let p = masked_softmax(&[1.0f64, 5.0, 1.0], Some(&[true, false, true])).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            masked_softmax(&[1.0f64], Some(&[false])),
            Err(Error::AllMasked { .. })
        ));
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
