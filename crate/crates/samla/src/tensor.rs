//! Dense row-major tensors over `f64`.
//!
//! This is the numeric substrate for the networks and the LP encodings.
//! Only vectors and matrices are needed; everything is plain `Vec<f64>`
//! storage with explicit shape checks that return [`TensorError`] rather
//! than panicking.

use std::fmt;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape product does not match the data length.
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// A parameter tensor was constructed with NaN or infinite entries.
    NonFinite { index: usize, value: f64 },
    /// An operation received a tensor of the wrong dimensions.
    DimMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { shape, data_len } => {
                write!(f, "shape {:?} requires {} entries, got {}", shape, shape.iter().product::<usize>(), data_len)
            }
            TensorError::NonFinite { index, value } => {
                write!(f, "non-finite entry {} at flat index {}", value, index)
            }
            TensorError::DimMismatch { context, expected, got } => {
                write!(f, "{}: expected shape {:?}, got {:?}", context, expected, got)
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense row-major array of `f64`, rank 1 or 2 in practice.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor and rejects NaN/Inf entries; use for parameters and
    /// anything persisted.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, data_len: data.len() });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { index: i, value: v });
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { shape: vec![n], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Uniform(lo, hi) initialization, used for weight matrices.
    pub fn uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    #[inline]
    pub fn get2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn expect_vector(&self, dim: usize, context: &'static str) -> Result<(), TensorError> {
        if self.shape.len() != 1 || self.shape[0] != dim {
            return Err(TensorError::DimMismatch { context, expected: vec![dim], got: self.shape.clone() });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * v` for a `[m, n]` matrix and length-`n` vector.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape.len() != 2 || v.shape.len() != 1 || self.shape[1] != v.shape[0] {
            return Err(TensorError::DimMismatch {
                context: "matvec",
                expected: vec![self.shape.get(1).copied().unwrap_or(0)],
                got: v.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m];
        for r in 0..m {
            let row = &self.data[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for c in 0..n {
                acc += row[c] * v.data[c];
            }
            out[r] = acc;
        }
        Ok(Tensor::vector(out))
    }

    /// `self^T * v` for a `[m, n]` matrix and length-`m` vector.
    pub fn matvec_transpose(&self, v: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape.len() != 2 || v.shape.len() != 1 || self.shape[0] != v.shape[0] {
            return Err(TensorError::DimMismatch {
                context: "matvec_transpose",
                expected: vec![self.shape.first().copied().unwrap_or(0)],
                got: v.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n];
        for r in 0..m {
            let row = &self.data[r * n..(r + 1) * n];
            let s = v.data[r];
            if s != 0.0 {
                for c in 0..n {
                    out[c] += row[c] * s;
                }
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Rank-1 update: `self += scale * u v^T` for a `[m, n]` matrix.
    pub fn add_outer(&mut self, u: &Tensor, v: &Tensor, scale: f64) {
        let (m, n) = (self.shape[0], self.shape[1]);
        debug_assert_eq!(u.len(), m);
        debug_assert_eq!(v.len(), n);
        for r in 0..m {
            let s = scale * u.data[r];
            if s != 0.0 {
                let row = &mut self.data[r * n..(r + 1) * n];
                for c in 0..n {
                    row[c] += s * v.data[c];
                }
            }
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// `self * other` for `[m, k]` x `[k, n]` matrices.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::DimMismatch {
                context: "matmul",
                expected: vec![self.shape.get(1).copied().unwrap_or(0)],
                got: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        for r in 0..m {
            for i in 0..k {
                let s = self.data[r * k + i];
                if s != 0.0 {
                    let src = &other.data[i * n..(i + 1) * n];
                    let dst = &mut out.data[r * n..(r + 1) * n];
                    for c in 0..n {
                        dst[c] += s * src[c];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::vector(data)
    }
}
