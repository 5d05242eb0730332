//! Dense row-major f64 tensors and the handful of kernels the model needs.
//!
//! Shapes are plain `Vec<usize>` and data is a flat buffer; nothing here is
//! generic over element type or rank because the whole artifact runs in f64
//! on matrices and vectors.

use crate::error::{Error, Result};

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor from a flat buffer, validating length and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values cannot fill shape {:?} ({} values)",
                data.len(),
                shape,
                expect
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "element {} of shape {:?} is {}",
                i, shape, data[i]
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a `[1]`-shaped tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// Immutable view of row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: element {} is {}",
                context, i, self.data[i]
            )));
        }
        Ok(())
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise in-place add; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

fn require_matrix(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "{} must be rank 2, got shape {:?}",
            name, t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `a (m×k) · b (k×n) -> (m×n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions disagree: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a (m×k) · bᵀ (n×k) -> (m×n)`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (n, k2) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul_nt inner dimensions disagree: {:?} vs transposed {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out.data[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// `aᵀ (k×m) · b (k×n) -> (m×n)`; used by backward passes.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul_tn outer dimensions disagree: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape.len(), 2);
    let (m, n) = (x.shape[0], x.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out.data[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// log(Σ exp(row)) with max subtraction; one value per row.
pub fn log_sum_exp_rows(x: &Tensor) -> Vec<f64> {
    debug_assert_eq!(x.shape.len(), 2);
    let (m, n) = (x.shape[0], x.shape[1]);
    (0..m)
        .map(|i| {
            let row = &x.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}
