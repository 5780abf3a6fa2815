//! Preconditioned conjugate gradients.

use super::precond::Preconditioner;
use super::vector::{axpy, dot, norm, xpby};
use super::LinearOperator;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iters: usize,
    /// `‖op(x) − b‖ / ‖b‖` of the returned iterate (recursive residual).
    pub rel_res: f64,
    pub converged: bool,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
}

/// Solves `op x = b` from a zero initial guess.
///
/// Stops when the relative residual drops to `rel_tol` or after `max_iter`
/// iterations; in the latter case the iterate with the smallest residual
/// seen is returned.
pub fn pcg(
    op: &dyn LinearOperator,
    b: &[f64],
    precond: &Preconditioner,
    rel_tol: f64,
    max_iter: usize,
) -> Result<PcgResult> {
    let n = op.dim();
    check_len("pcg right-hand side", n, b.len())?;
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("pcg tolerance {rel_tol}")));
    }
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("pcg right-hand side"));
    }
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(PcgResult {
            x,
            iters: 0,
            rel_res: 0.0,
            converged: true,
            history: vec![0.0],
        });
    }

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut best = (1.0, 0usize);
    let mut best_x = x.clone();

    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(Error::NonFinite("pcg curvature"));
        }
        if curvature <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("pcg residual"));
        }
        history.push(rel);
        if rel <= rel_tol {
            return Ok(PcgResult {
                x,
                iters: it,
                rel_res: rel,
                converged: true,
                history,
            });
        }
        if rel < best.0 {
            best = (rel, it);
            best_x.copy_from_slice(&x);
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        xpby(&z, beta, &mut p);
    }

    let last = *history.last().unwrap();
    if best.0 < last {
        x = best_x;
    }
    Ok(PcgResult {
        x,
        iters: max_iter,
        rel_res: best.0.min(last),
        converged: false,
        history,
    })
}
