//! Dense float64 tensors and a define-by-run reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain row-major value. Differentiation happens through a
//! [`Graph`]: leaves are registered with [`Graph::param`] or [`Graph::input`],
//! every op appends a node, and [`Graph::backward`] walks the nodes in reverse
//! insertion order (which is a topological order by construction).

mod graph;

pub use graph::{Graph, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
}

impl TensorError {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Contract {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major n-dimensional array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::contract(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::contract(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel]).expect("zeros: invalid shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::contract("from_rows", "ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::contract(
                op,
                format!("expected a matrix, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn at2(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape[1] + col]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        // 0·x is NaN exactly when x is infinite or NaN. Independent lanes
        // let the compiler vectorise the sum.
        let mut lanes = [0.0f64; 8];
        let chunks = self.data.chunks_exact(8);
        let tail = chunks.remainder().iter().fold(0.0, |acc, &v| acc + v * 0.0);
        for c in chunks {
            for (l, &v) in lanes.iter_mut().zip(c) {
                *l += v * 0.0;
            }
        }
        lanes.iter().sum::<f64>() + tail == 0.0
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`, plain row-major kernel.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { matmul_avx512(a, b, m, k, n) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { matmul_avx2(a, b, m, k, n) };
        }
    }
    matmul_rows(a, b, m, k, n)
}

/// Same loops compiled for wider vectors. Rust never contracts a multiply
/// and an add into one fused operation, so results are bitwise identical
/// to the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn matmul_avx512(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_rows(a, b, m, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_rows(a, b, m, k, n)
}

#[inline(always)]
fn matmul_rows(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    // Four output rows share each row of `b`. Every element is still summed
    // over `p` in ascending order, so blocking does not change results.
    let blocked = m - m % 4;
    for (i, block) in c[..blocked * n].chunks_exact_mut(4 * n).enumerate() {
        let i = 4 * i;
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (
                a[i * k + p],
                a[(i + 1) * k + p],
                a[(i + 2) * k + p],
                a[(i + 3) * k + p],
            );
            let brow = &b[p * n..(p + 1) * n];
            let rows = c0.iter_mut().zip(c1.iter_mut()).zip(c2.iter_mut()).zip(c3.iter_mut());
            for ((((x0, x1), x2), x3), &bv) in rows.zip(brow) {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
    }
    for i in blocked..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose_kernel(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}
