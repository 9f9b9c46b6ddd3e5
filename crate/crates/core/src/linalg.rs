//! Small dense kernels over row-major slices.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for model parameters: `f32` for serving and
/// training, `f64` for gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

const LANES: usize = 8;

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        let xb = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + bias` for row-major `W` of shape `out.len() x x.len()`.
#[inline]
pub fn affine<T: Real>(w: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * cols..(r + 1) * cols], x) + bias[r];
    }
}

/// `out += Wᵀ y` for row-major `W` of shape `y.len() x out.len()`.
#[inline]
pub fn matvec_t_acc<T: Real>(w: &[T], y: &[T], out: &mut [T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr != T::zero() {
            axpy(yr, &w[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `G += a bᵀ` for row-major `G` of shape `a.len() x b.len()`.
#[inline]
pub fn outer_acc<T: Real>(g: &mut [T], a: &[T], b: &[T]) {
    let cols = b.len();
    debug_assert_eq!(g.len(), a.len() * cols);
    for (r, &ar) in a.iter().enumerate() {
        if ar != T::zero() {
            axpy(ar, b, &mut g[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax_in_place(values: &mut [f64]) {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..19).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn affine_and_transpose() {
        // W = [[1,2],[3,4],[5,6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 3];
        affine(&w, &[1.0, 0.0, -1.0], &[1.0, -1.0], &mut out);
        assert_eq!(out, [0.0, -1.0, -2.0]);
        let mut back = [0.0; 2];
        matvec_t_acc(&w, &[1.0, 0.0, 1.0], &mut back);
        assert_eq!(back, [6.0, 8.0]);
        let mut g = [0.0; 6];
        outer_acc(&mut g, &[1.0, 2.0, 0.0], &[3.0, 4.0]);
        assert_eq!(g, [3.0, 4.0, 6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_is_normalized_and_stable() {
        let mut v = vec![1000.0, 1000.0, 999.0];
        log_softmax_in_place(&mut v);
        let s: f64 = v.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
