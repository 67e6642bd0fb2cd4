//! Dense row-major tensors in double precision.
//!
//! Shapes are kept general, but most of the crate works with rank-2
//! matrices `[rows, cols]` and NHWC image blocks `[b, h, w, c]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged row set");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
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

    /// Row count under the rank-2 view (trailing dims folded into columns).
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[0]
        }
    }

    /// Column count under the rank-2 view.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "shape mismatch in zip");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_scaled");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}

/// `out = a (r×k) · b (k×c)`, single-threaded deterministic gemm.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k) = (a.rows(), a.cols());
    let (k2, c) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
    let mut out = Tensor::zeros(vec![r, c]);
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            c,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            c as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            c as isize,
            1,
        );
    }
    out
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k) = (a.rows(), a.cols());
    let (c, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_nt inner dims {} vs {}", k, k2);
    let mut out = Tensor::zeros(vec![r, c]);
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            c,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            0.0,
            out.data.as_mut_ptr(),
            c as isize,
            1,
        );
    }
    out
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, r) = (a.rows(), a.cols());
    let (k2, c) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_tn inner dims {} vs {}", k, k2);
    let mut out = Tensor::zeros(vec![r, c]);
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            c,
            1.0,
            a.data.as_ptr(),
            1,
            r as isize,
            b.data.as_ptr(),
            c as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            c as isize,
            1,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::new(vec![2, 3], (0..6).map(|v| (v * v) as f64).collect()).unwrap();
        // a (2x3) · bᵀ (3x2)
        let nt = matmul_nt(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| a.at(i, k) * b.at(j, k)).sum();
                assert!((nt.at(i, j) - want).abs() < 1e-12);
            }
        }
        let tn = matmul_tn(&a, &b);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|k| a.at(k, i) * b.at(k, j)).sum();
                assert!((tn.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reshape_rejects_size_change() {
        let t = Tensor::zeros(vec![2, 3]);
        assert!(t.reshape(vec![7]).is_err());
    }
}
