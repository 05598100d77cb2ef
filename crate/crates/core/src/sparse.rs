//! Compressed sparse row matrices over real or complex scalars.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use num_complex::Complex64;

/// Field scalar used by the assembly and the eigensolver.
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Debug
    + Default
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Mul<f64, Output = Self>
    + 'static
{
    const IS_COMPLEX: bool;
    fn cj(self) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn abs2(self) -> f64;
    fn from_f64(v: f64) -> Self;
    /// `e^{i k η}`; for real scalars `sin(kη)` must vanish.
    fn phase(eta: f64, k: i8) -> Self;
    fn to_c64(self) -> Complex64;
    fn from_c64(c: Complex64) -> Self;
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;
    fn cj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn phase(eta: f64, k: i8) -> Self {
        (k as f64 * eta).cos()
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn from_c64(c: Complex64) -> Self {
        c.re
    }
}

impl Scalar for Complex64 {
    const IS_COMPLEX: bool = true;
    fn cj(self) -> Self {
        self.conj()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn phase(eta: f64, k: i8) -> Self {
        Complex64::from_polar(1.0, k as f64 * eta)
    }
    fn to_c64(self) -> Complex64 {
        self
    }
    fn from_c64(c: Complex64) -> Self {
        c
    }
}

/// `xᴴ y`
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut s = T::default();
    for (a, b) in x.iter().zip(y) {
        s += a.cj() * *b;
    }
    s
}

pub fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
}

/// `y += a x`
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Square matrix with the given sorted pattern and zero values.
    pub fn zeros(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Self {
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![T::default(); nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Position of `(i, j)` in `values`.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.find(i, j).map(|p| self.values[p]).unwrap_or_default()
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let mut s = T::default();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::default(); self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `xᴴ A x`
    pub fn quadratic_form(&self, x: &[T]) -> T {
        dot(x, &self.mul_vec(x))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs2().sqrt()))
    }

    /// `max |A_ij - conj(A_ji)|`
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let d = self.values[p] - self.get(j, i).cj();
                worst = worst.max(d.abs2().sqrt());
            }
        }
        worst
    }

    pub fn same_pattern(&self, other: &CsrMatrix<T>) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// `self + s · other` on a shared pattern.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix<T>) -> CsrMatrix<T> {
        assert!(self.same_pattern(other), "add_scaled needs a shared pattern");
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v += *w * s;
        }
        out
    }

    /// Values of the CSC representation of a Hermitian matrix stored as CSR.
    ///
    /// Column `j` of `A` equals the conjugate of row `j` of `Aᴴ = A`, so the
    /// CSR arrays with conjugated values are a valid CSC of `A`.
    pub fn hermitian_csc_values(&self) -> Vec<T> {
        self.values.iter().map(|v| v.cj()).collect()
    }

    pub fn with_csc<R>(&self, vals: &[T], f: impl FnOnce(SparseColMatRef<'_, usize, T>) -> R) -> R {
        let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.row_ptr, None, &self.col_idx);
        f(SparseColMatRef::new(sym, vals))
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::default(); self.n]; self.n];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i][self.col_idx[p]] = self.values[p];
            }
        }
        d
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }
}
