//! Scalar abstraction for the forward pass: `f64` for training and
//! inference, double-double for the finite-difference reference.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use qd::Quad;

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    /// `ln(1 + x)` for `x > −1`.
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;

    /// `c (+)= a·b` for row-major `c` of shape `m×n`. `a` (`m×k`) and `b`
    /// (`k×n`) are addressed by `(row stride, column stride)`, so
    /// transposes cost nothing. `accumulate = false` overwrites `c`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), c: &mut [Self], accumulate: bool) {
        assert!(c.len() >= m * n);
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = Self::zero());
        }
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * sa.0 + p * sa.1];
                for (j, v) in row.iter_mut().enumerate() {
                    *v += aip * b[p * sb.0 + j * sb.1];
                }
            }
        }
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], accumulate: bool) {
        if m == 0 || n == 0 {
            return;
        }
        let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
        if k > 0 {
            assert!(a.len() > last(m, k, sa) && b.len() > last(k, n, sb));
        }
        assert!(c.len() >= m * n);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: every index the kernel touches was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0 as isize,
                sa.1 as isize,
                b.as_ptr(),
                sb.0 as isize,
                sb.1 as isize,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// Double-double scalar, roughly 106 significant bits.
pub type Wide = Quad;

impl Real for Wide {
    fn from_f64(v: f64) -> Self {
        Quad::from_f64(v)
    }
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    fn exp(self) -> Self {
        Quad::exp(self)
    }
    fn ln_1p(self) -> Self {
        // The double-double sum keeps every bit of a small argument.
        (self + Quad::from_f64(1.0)).ln()
    }
    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: f64) -> Wide {
        Wide::from_f64(v)
    }

    #[test]
    fn wide_exp_and_ln_are_consistent() {
        // e^0.3 = 1.3498588075760032 − 9.4473146734324e−17
        let e = Real::exp(w(0.3));
        assert_eq!(e.0, 1.349_858_807_576_003_2);
        assert!((e.1 + 9.447_314_673_432_387e-17).abs() < 1e-30);
        let (a, b) = (w(-2.7), w(1.25));
        let prod = Real::exp(a) * Real::exp(b);
        let sum = Real::exp(a + b);
        assert!(((prod - sum) / sum).to_f64().abs() < 1e-30);
        let y = w(5.1);
        assert!((Real::exp(y).ln() - y).to_f64().abs() < 1e-30);
    }

    #[test]
    fn wide_ln_1p_small_argument() {
        let x = w(1e-5);
        let series = x - x * x / w(2.0) + x * x * x / w(3.0) - x * x * x * x / w(4.0) + x * x * x * x * x / w(5.0);
        assert!((Real::ln_1p(x) - series).to_f64().abs() < 1e-30);
    }

    #[test]
    fn fast_gemm_matches_reference() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let aw: Vec<Wide> = a.iter().map(|&v| w(v)).collect();
        let bw: Vec<Wide> = b.iter().map(|&v| w(v)).collect();
        let mut c = vec![1.0; m * n];
        let mut cw = vec![w(1.0); m * n];
        // b read transposed: b is stored n×k.
        f64::gemm(m, k, n, &a, (k, 1), &b, (1, k), &mut c, true);
        Wide::gemm(m, k, n, &aw, (k, 1), &bw, (1, k), &mut cw, true);
        for (x, y) in c.iter().zip(&cw) {
            assert!((x - y.to_f64()).abs() < 1e-13);
        }
        f64::gemm(m, k, n, &a, (k, 1), &b, (1, k), &mut c, false);
        Wide::gemm(m, k, n, &aw, (k, 1), &bw, (1, k), &mut cw, false);
        for (x, y) in c.iter().zip(&cw) {
            assert!((x - y.to_f64()).abs() < 1e-13);
        }
    }

    #[test]
    fn wide_arithmetic_examples() {
        let third = w(1.0) / w(3.0);
        assert!((third * w(3.0) - w(1.0)).to_f64().abs() < 1e-31);
        let s = Real::sqrt(w(2.0));
        assert!((s * s - w(2.0)).to_f64().abs() < 1e-31);
        assert!(w(0.3) > w(f64::NEG_INFINITY));
    }
}
