use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Working precision. Training runs in `f32`; gradient checks use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64_lossy(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c <- alpha * a @ b + beta * c` on strided row/column views.
    ///
    /// `a` is m×k, `b` is k×n and `c` is m×n. When `beta` is zero `c` is not read.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: View<'_, Self>, b: View<'_, Self>, beta: Self, c: ViewMut<'_, Self>);
}

/// Strided read-only matrix view starting at `offset` within `data`.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

pub struct ViewMut<'a, F> {
    pub data: &'a mut [F],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, F> View<'a, F> {
    pub fn rows(data: &'a [F], offset: usize, row_stride: usize) -> Self {
        View { data, offset, row_stride, col_stride: 1 }
    }

    /// Transposed view of a row-major block: element (i, j) is `data[offset + j * row_stride + i]`.
    pub fn transposed(data: &'a [F], offset: usize, row_stride: usize) -> Self {
        View { data, offset, row_stride: 1, col_stride: row_stride }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "gemm view out of bounds");
    }
}

impl<'a, F> ViewMut<'a, F> {
    pub fn rows(data: &'a mut [F], offset: usize, row_stride: usize) -> Self {
        ViewMut { data, offset, row_stride, col_stride: 1 }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "gemm output view out of bounds");
    }
}

macro_rules! impl_real {
    ($ty:ty, $name:literal, $kernel:path) => {
        impl Real for $ty {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64_lossy(x: f64) -> Self {
                x as $ty
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: View<'_, Self>, b: View<'_, Self>, beta: Self, c: ViewMut<'_, Self>) {
                if m == 0 || n == 0 {
                    return;
                }
                a.check(m, k);
                b.check(k, n);
                c.check(m, n);
                // SAFETY: every element addressed by the kernel lies inside the
                // slices, as checked above; `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr().add(a.offset),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr().add(b.offset),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.data.as_mut_ptr().add(c.offset),
                        c.row_stride as isize,
                        c.col_stride as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_gemm_matches_loops() {
        // a: 2x3, b given transposed (stored as 2x3), c = a @ b^T
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f64, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, View::rows(&a, 0, 3), View::transposed(&bt, 0, 3), 0.0, ViewMut::rows(&mut c, 0, 2));
        assert_eq!(c, [-2.0, 5.5, -2.0, 16.0]);
    }
}
