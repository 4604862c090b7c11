//! Floating-point element type shared by fields, tapes and parameters.
//!
//! Training runs in `f32`; every oracle and gradient check runs in `f64`.

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn erf(self) -> Self;

    /// `c = alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; each stride pair is
    /// `(row_stride, col_stride)` in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $erf:path, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every strided access.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", libm::erff, matrixmultiply::sgemm);
impl_scalar!(f64, "f64", libm::erf, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gemm_matches_naive_product() {
        // [2x3] * [3x2]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        // transposed lhs via strides: a^T is [3x2]
        let mut d = vec![0.0f64; 9];
        f64::gemm(3, 2, 3, 1.0, &a, (1, 3), &a, (3, 1), 0.0, &mut d, (3, 1));
        assert_eq!(d[0], 1.0 * 1.0 + 4.0 * 4.0);
        assert_eq!(d[5], 2.0 * 3.0 + 5.0 * 6.0);
    }

    #[test]
    fn erf_at_zero() {
        assert_eq!(Scalar::erf(0.0f64), 0.0);
        assert_eq!(Scalar::erf(0.0f32), 0.0);
    }
}
