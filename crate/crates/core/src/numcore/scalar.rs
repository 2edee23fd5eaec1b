use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating element type of a [`Tensor`](super::Tensor).
///
/// Models run in `f32`; the same kernels instantiate at `f64` so that
/// finite-difference gradient checks are not swamped by rounding.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Row-major `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k`
    /// and `op(b)` is `k x n`. `trans_*` means the buffer holds the
    /// transpose.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    /// General strided form: element `(i, p)` of `a` is `a[i * rsa + p * csa]`,
    /// likewise for `b`, and `c` rows are `rsc` apart with unit column stride.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        rsc: usize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical (rows x cols); stored either as-is or transposed
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

fn check_gemm_lens(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k, "gemm: lhs holds {a} values, need {}", m * k);
    assert!(b >= k * n, "gemm: rhs holds {b} values, need {}", k * n);
    assert!(c >= m * n, "gemm: output holds {c} values, need {}", m * n);
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_gemm_lens(m, k, n, a.len(), b.len(), c.len());
                if k == 0 {
                    c[..m * n].iter_mut().for_each(|v| *v *= beta);
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                Self::gemm_strided(
                    m,
                    k,
                    n,
                    a,
                    (rsa as usize, csa as usize),
                    b,
                    (rsb as usize, csb as usize),
                    beta,
                    c,
                    n,
                );
            }

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                rsc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(rsc >= n, "gemm: output row stride {rsc} below width {n}");
                assert!(extent(m, n, rsc, 1) <= c.len(), "gemm: output too small");
                if k == 0 {
                    for row in c.chunks_mut(rsc).take(m) {
                        row[..n].iter_mut().for_each(|v| *v *= beta);
                    }
                    return;
                }
                assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: lhs too small");
                assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: rhs too small");
                // SAFETY: the extents asserted above bound every index the
                // kernel touches for these shapes and strides.
                unsafe {
                    $kernel(
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
                        rsc as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
