//! Row-major dense matrices, strided views and a gemm wrapper generic over
//! single and double precision.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the network is generic over: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// `C ← α·A·B + β·C` on raw strided storage.
    ///
    /// # Safety
    /// All pointers must be valid for the given shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn view(&self) -> View<'_, T> {
        self.block(0, self.rows, 0, self.cols)
    }

    pub fn view_mut(&mut self) -> ViewMut<'_, T> {
        let (r, c) = (self.rows, self.cols);
        self.block_mut(0, r, 0, c)
    }

    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> View<'_, T> {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "block out of range");
        View { data: &self.data, off: r0 * self.cols + c0, rows: nr, cols: nc, rs: self.cols as isize, cs: 1 }
    }

    pub fn block_mut(&mut self, r0: usize, nr: usize, c0: usize, nc: usize) -> ViewMut<'_, T> {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "block out of range");
        let rs = self.cols as isize;
        ViewMut { data: &mut self.data, off: r0 * self.cols + c0, rows: nr, cols: nc, rs, cs: 1 }
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum()
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| U::c(v.f64())).collect() }
    }

    /// Rows selected by index, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Mat<T> {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }
}

/// `A·B` for whole matrices.
pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(a.rows, b.cols);
    gemm(T::one(), a.view(), b.view(), T::zero(), out.view_mut());
    out
}

#[derive(Clone, Copy)]
pub struct View<'a, T> {
    data: &'a [T],
    off: usize,
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<T> View<'_, T> {
    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off as isize + (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs;
            assert!(last >= 0 && (last as usize) < self.data.len(), "view exceeds storage");
        }
    }
}

pub struct ViewMut<'a, T> {
    data: &'a mut [T],
    off: usize,
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

/// `C ← α·A·B + β·C`.
pub fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        let last = c.off as isize + (c.rows as isize - 1) * c.rs + (c.cols as isize - 1) * c.cs;
        assert!((last as usize) < c.data.len(), "output view exceeds storage");
    }
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above; `c` is an exclusive borrow
    // and cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows, a.cols, b.cols, alpha,
            a.data.as_ptr().add(a.off), a.rs, a.cs,
            b.data.as_ptr().add(b.off), b.rs, b.cs,
            beta, c.data.as_mut_ptr().add(c.off), c.rs, c.cs,
        );
    }
}
