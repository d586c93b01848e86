//! Scalar abstraction: the whole numeric core is generic over `Scalar`,
//! which is implemented for `f32` and `f64`. Concrete aliases for the
//! default 64-bit instantiation live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable by the tensor engine and the probabilistic
/// models. Carries a dense matrix-multiply kernel so the generic code can
/// dispatch to an optimized gemm per concrete type.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; panics if the value is not representable.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value not representable in scalar type")
    }

    /// Widening (or identity) conversion to `f64`.
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// `c = alpha * a @ b + beta * c` for row-major strided matrices:
    /// `a` is m x k, `b` is k x n, `c` is m x n. Strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
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

impl Scalar for f64 {
    #[inline]
    fn gemm(
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
        unsafe {
            matrixmultiply::dgemm(
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

impl Scalar for f32 {
    #[inline]
    fn gemm(
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
        unsafe {
            matrixmultiply::sgemm(
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

/// log(sum(exp(xs))) with the usual max shift; empty input yields -inf.
pub fn log_sum_exp<S: Scalar>(xs: impl Iterator<Item = S> + Clone) -> S {
    let mut max = S::neg_infinity();
    for x in xs.clone() {
        if x > max {
            max = x;
        }
    }
    if max == S::neg_infinity() {
        return S::neg_infinity();
    }
    let mut acc = S::zero();
    for x in xs {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_via_strides() {
        // a^T where a is stored 2x3 row-major: treat as 3x2 with strides swapped.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0]; // 2x2 identity
        let mut c = [0.0f64; 6];
        f64::gemm(3, 2, 2, 1.0, &a, 1, 3, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn log_sum_exp_stable() {
        let v = [1000.0f64, 0.0];
        let got = log_sum_exp(v.iter().copied());
        assert!((got - 1000.0).abs() < 1e-9);
        assert_eq!(
            log_sum_exp(std::iter::empty::<f64>()),
            f64::NEG_INFINITY
        );
    }
}
