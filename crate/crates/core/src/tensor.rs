//! Dense row-major `f64` tensors.
//!
//! Only the handful of operations the layer stack needs are provided. Matrix
//! products go through `matrixmultiply::dgemm`, whose strided interface lets
//! the transposed products used in backpropagation run without copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("expected 2-D tensor, got shape {s:?}"))),
        }
    }

    /// `(d0, d1, d2)` of a 3-D tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(Error::Dimension(format!("expected 3-D tensor, got shape {s:?}"))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[self.shape.len() - 1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    /// The `i`-th slab along the leading axis, as a tensor of the remaining axes.
    pub fn slab(&self, i: usize) -> Result<Tensor> {
        let Some((&lead, rest)) = self.shape.split_first() else {
            return Err(Error::Dimension("slab of a 0-D tensor".into()));
        };
        if i >= lead {
            return Err(Error::Index(format!("slab {i} of {lead}")));
        }
        let width: usize = rest.iter().product();
        Tensor::new(rest.to_vec(), self.data[i * width..(i + 1) * width].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::Dimension("stack of zero tensors".into()));
        };
        if parts.iter().any(|p| p.shape != first.shape) {
            return Err(Error::Dimension("stack of differently shaped tensors".into()));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Tensor::new(shape, data)
    }

    /// Gathers rows of a 2-D tensor by index.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index(format!("row {i} of {rows}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), cols], data)
    }

    /// Repeats a 2-D tensor `times` times along the row axis.
    pub fn tile_rows(&self, times: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(times * self.data.len());
        for _ in 0..times {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(vec![rows * times, cols], data)
    }

    /// Repeats every row `times` times side by side: `[B×d] -> [B×(times·d)]`.
    pub fn tile_cols(&self, times: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(times * self.data.len());
        for r in 0..rows {
            for _ in 0..times {
                data.extend_from_slice(self.row(r));
            }
        }
        Tensor::new(vec![rows, cols * times], data)
    }

    /// `self · other` for 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1), &mut out.data, 0.0);
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "t_matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, &self.data, (1, m), &other.data, (n, 1), &mut out.data, 0.0);
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (n, k2) = other.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_t {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, &self.data, (k, 1), &other.data, (1, k), &mut out.data, 0.0);
        Ok(out)
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                self.shape, other.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with [`Error::NonFinite`] if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_owned()))
        }
    }
}

/// `c = a·b + beta·c` with row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the caller guarantees that `a` holds an m×k matrix under the
    // given strides, `b` a k×n matrix and `c` a contiguous row-major m×n matrix.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.data[i * k + l] * b.data[l * n + j];
                }
                out.data[i * n + j] = s;
            }
        }
        out
    }

    fn transpose(a: &Tensor) -> Tensor {
        let (r, c) = a.dims2().unwrap();
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = a.data[i * c + j];
            }
        }
        out
    }

    fn seq(shape: &[usize], offset: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|i| ((i as f64) * 0.37 + offset).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![0, 3], vec![]).is_ok());
    }

    #[test]
    fn products_agree_with_naive_loops() {
        let a = seq(&[5, 7], 0.1);
        let b = seq(&[7, 3], 0.9);
        let reference = naive(&a, &b);
        let close = |x: &Tensor, y: &Tensor| {
            x.shape == y.shape
                && x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&a.matmul(&b).unwrap(), &reference));
        assert!(close(&transpose(&a).t_matmul(&b).unwrap(), &reference));
        assert!(close(&a.matmul_t(&transpose(&b)).unwrap(), &reference));
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn tiling() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            a.tile_rows(2).unwrap().data(),
            &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            a.tile_cols(2).unwrap().data(),
            &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]
        );
    }

    #[test]
    fn non_finite_is_detected() {
        let mut t = Tensor::zeros(&[2]);
        assert!(t.ensure_finite("x").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(matches!(t.ensure_finite("x"), Err(Error::NonFinite(_))));
    }
}
