//! Floating-point element types and the matrix-multiply kernel.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

/// Rows per parallel GEMM task. Fixed so results never depend on the
/// number of worker threads.
const ROW_CHUNK: usize = 64;

pub trait Scalar:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for strided `a` (m x k) and `b`
    /// (k x n); `c` is row-major and contiguous.
    ///
    /// # Safety
    /// `a` and `b` must be valid for every index addressed by the
    /// given dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
    );
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

/// Logical layout of a row-major buffer used as a GEMM operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Use the stored `rows x cols` matrix as is.
    Normal,
    /// Use the transpose of the stored `cols x rows` matrix.
    Transposed,
}

/// Pointer that can cross into rayon tasks; only read through.
#[derive(Clone, Copy)]
struct ConstPtr<T>(*const T);
unsafe impl<T: Sync> Send for ConstPtr<T> {}
unsafe impl<T: Sync> Sync for ConstPtr<T> {}

impl<T> ConstPtr<T> {
    fn get(self) -> *const T {
        self.0
    }
}

/// `c (m x n) = alpha * op(a) * op(b) + beta * c` where `op(a)` is m x k and
/// `op(b)` is k x n. Buffers are row-major; `layout` says whether the
/// stored matrix is the operand or its transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has {} elements, expected {m}x{k}", a.len());
    assert_eq!(b.len(), k * n, "gemm: rhs has {} elements, expected {k}x{n}", b.len());
    assert_eq!(c.len(), m * n, "gemm: output has {} elements, expected {m}x{n}", c.len());
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match la {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    let ap = ConstPtr(a.as_ptr());
    let bp = ConstPtr(b.as_ptr());
    let run = |chunk: usize, rows: &mut [T]| {
        let r0 = chunk * ROW_CHUNK;
        let mr = rows.len() / n;
        // SAFETY: rows r0..r0+mr of op(a) lie inside `a` by the length
        // assertions above, and `b` is addressed in full.
        unsafe {
            let a0 = ap.get().offset(r0 as isize * rsa);
            T::gemm_raw(mr, k, n, alpha, a0, rsa, csa, bp.get(), rsb, csb, beta, rows.as_mut_ptr());
        }
    };
    if m * k * n < 1 << 16 {
        c.chunks_mut(ROW_CHUNK * n).enumerate().for_each(|(i, rows)| run(i, rows));
    } else {
        c.par_chunks_mut(ROW_CHUNK * n).enumerate().for_each(|(i, rows)| run(i, rows));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn all_layouts_agree_with_the_naive_product() {
        let (m, k, n) = (130, 7, 5);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 104_729) % 11) as f64 * 0.5).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, la) in [(&a, Layout::Normal), (&at, Layout::Transposed)] {
            for (bb, lb) in [(&b, Layout::Normal), (&bt, Layout::Transposed)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, 1.0, aa, la, bb, lb, 0.0, &mut c);
                assert_eq!(c, want, "{la:?} {lb:?}");
            }
        }
    }

    #[test]
    fn beta_accumulates() {
        let mut c = vec![1.0f32; 4];
        gemm(2, 1, 2, 2.0, &[1.0, 2.0], Layout::Normal, &[3.0, 4.0], Layout::Normal, 1.0, &mut c);
        assert_eq!(c, [7.0, 9.0, 13.0, 17.0]);
    }
}
