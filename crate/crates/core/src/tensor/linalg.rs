//! Small dense row-major matrix kernels used by the convolution ops.
//!
//! Everything here is written so results do not depend on thread count or
//! target features: accumulation orders are fixed (axpy loops keep lanes
//! independent; dot products use a fixed 4-way split), which keeps training
//! bitwise reproducible while still auto-vectorizing.

use super::Scalar;

/// `c[m*n] += a[m*k] * b[k*n]`
pub fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aik * bv;
            }
        }
    }
}

/// `c[m*n] += a[m*k] * b[n*k]^T` — dot-product form.
pub fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv = *cv + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k*n] += a[m*k]^T * b[m*n]` — axpy form over the shared m dimension.
pub fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let crow = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aik * bv;
            }
        }
    }
}

/// Dot product with a fixed 4-way accumulator split (deterministic order).
#[inline]
pub fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    debug_assert_eq!(x.len(), y.len());
    let chunks = x.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (S::zero(), S::zero(), S::zero(), S::zero());
    for i in 0..chunks {
        let xb = &x[i * 4..i * 4 + 4];
        let yb = &y[i * 4..i * 4 + 4];
        s0 = s0 + xb[0] * yb[0];
        s1 = s1 + xb[1] * yb[1];
        s2 = s2 + xb[2] * yb[2];
        s3 = s3 + xb[3] * yb[3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..x.len() {
        tail = tail + x[i] * y[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}
