use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Floating-point element type of tensors: `f64` for verification, `f32`
/// for training and inference.
pub trait Scalar:
    Float + Default + Debug + Sum + Send + Sync + Serialize + for<'de> Deserialize<'de> + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided matrices (`a`: m x k,
    /// `b`: k x n, `c`: m x n).
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie
    /// inside the respective buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc)
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds an `N x C` matrix from rows.
    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        let data = rows.iter().flatten().map(|&v| T::from_f64(v)).collect();
        Self {
            shape: vec![rows.len(), C],
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row count of a 2D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v = *v * s);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }
}

/// `c (n x m) += a (n x k) * b (k x m)`, all row-major.
pub fn gemm_acc<T: Scalar>(a: &[T], n: usize, k: usize, b: &[T], m: usize, c: &mut [T]) {
    gemm_acc_t(a, false, n, k, b, false, m, c);
}

/// `c (n x m) += op(a) * op(b)` where `op(a)` is `n x k` and `op(b)` is
/// `k x m`. A set transpose flag means the operand is stored transposed
/// (`a` as `k x n`, `b` as `m x k`), row-major either way.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc_t<T: Scalar>(
    a: &[T],
    a_transposed: bool,
    n: usize,
    k: usize,
    b: &[T],
    b_transposed: bool,
    m: usize,
    c: &mut [T],
) {
    assert_eq!(a.len(), n * k, "gemm: lhs size");
    assert_eq!(b.len(), k * m, "gemm: rhs size");
    assert_eq!(c.len(), n * m, "gemm: output size");
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, n as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (m as isize, 1) };
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        T::gemm_raw(
            n,
            k,
            m,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            c.as_mut_ptr(),
            m as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        for &(n, k, m) in &[(1, 1, 1), (3, 5, 2), (9, 4, 7), (16, 3, 8), (5, 0, 3)] {
            let a: Vec<f64> = (0..n * k).map(|v| (v as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * m).map(|v| (v as f64 * 0.11).cos()).collect();
            let mut c = vec![0.5; n * m];
            gemm_acc(&a, n, k, &b, m, &mut c);
            for i in 0..n {
                for j in 0..m {
                    let expect: f64 = 0.5 + (0..k).map(|t| a[i * k + t] * b[t * m + j]).sum::<f64>();
                    assert!((c[i * m + j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_operands() {
        let (n, k, m) = (5, 3, 4);
        let a: Vec<f64> = (0..n * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * m).map(|v| (v as f64).sin()).collect();
        let at = Tensor::from_vec(&[n, k], a.clone()).unwrap().transpose();
        let bt = Tensor::from_vec(&[k, m], b.clone()).unwrap().transpose();
        let mut plain = vec![0.0; n * m];
        gemm_acc(&a, n, k, &b, m, &mut plain);
        let mut both = vec![0.0; n * m];
        gemm_acc_t(at.data(), true, n, k, bt.data(), true, m, &mut both);
        for (x, y) in plain.iter().zip(&both) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let tt = t.transpose();
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.row(2), &[2.0, 5.0]);
    }
}
