//! Scalar abstraction over `f32` (storage and fast path) and `f64`
//! (gradient checking).

use std::fmt::{Debug, Display};

use num_traits::Float;

pub trait Real:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with explicit strides (see
    /// [`matrixmultiply::sgemm`]).
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major dense matrix product `c = alpha * op(a) * op(b) + beta * c`.
///
/// `a` is stored as `a_rows x a_cols`, `b` as `b_rows x b_cols`; the
/// `trans_*` flags select the transpose of the stored matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    a: &[T],
    (a_rows, a_cols): (usize, usize),
    trans_a: bool,
    b: &[T],
    (b_rows, b_cols): (usize, usize),
    trans_b: bool,
    alpha: T,
    beta: T,
    c: &mut [T],
) {
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1)
    };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.len(), m * n, "output has wrong size");
    T::gemm_raw(
        m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1,
    );
}
