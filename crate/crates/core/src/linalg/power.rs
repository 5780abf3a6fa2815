//! Spectral norm estimation.

use super::csr::CsrMatrix;
use super::vector::{norm, norm_sq};

/// Estimates `‖A‖² = λ_max(AᵀA)` by power iteration, stopping once the
/// Rayleigh quotient changes by at most `tol` relatively.
pub fn norm_sq_estimate(a: &CsrMatrix, tol: f64) -> f64 {
    let at = a.transpose();
    norm_sq_estimate_with(a, &at, tol)
}

/// Same as [`norm_sq_estimate`] with a precomputed transpose.
pub fn norm_sq_estimate_with(a: &CsrMatrix, at: &CsrMatrix, tol: f64) -> f64 {
    const MAX_ITERS: usize = 10_000;
    let n = a.n_cols();
    if n == 0 || a.nnz() == 0 {
        return 0.0;
    }
    // deterministic start vector with no special alignment to the grid
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut av = vec![0.0; a.n_rows()];
    let mut w = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..MAX_ITERS {
        a.spmv_into(&v, &mut av);
        let rq = norm_sq(&av);
        at.spmv_into(&av, &mut w);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let done = (rq - est).abs() <= tol * rq;
        est = rq;
        if done {
            break;
        }
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / nw);
    }
    est
}
