//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;
use num_complex::Complex64;

const PIVOT_RTOL: f64 = 1e-13;

/// Inverse of a square complex matrix, `None` when numerically singular.
pub(crate) fn invert(m: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    if m.nrows() != m.ncols() {
        return None;
    }
    let lu = m.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let min = diag.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= PIVOT_RTOL * max {
        return None;
    }
    lu.try_inverse()
}

/// Reject LU factors whose pivots collapse relative to the largest one.
pub(crate) fn pivots_ok<T: Copy>(diag: impl Iterator<Item = T>, norm: impl Fn(T) -> f64) -> bool {
    let mut max = 0.0_f64;
    let mut min = f64::INFINITY;
    for d in diag {
        let n = norm(d);
        max = max.max(n);
        min = min.min(n);
    }
    max > 0.0 && min > PIVOT_RTOL * max && max.is_finite()
}
