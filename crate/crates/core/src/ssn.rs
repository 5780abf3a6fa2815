//! Semi-smooth Newton solver for the dual equations
//! `F(λ) = cλ − A·prox_{ηg}(y − ηAᵀλ) − z = 0`
//! with an Armijo line search on the merit function whose gradient is `F`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::vector::{axpy, dot, norm, norm_sq};
use crate::linalg::{
    incomplete_cholesky, jacobi_precond, pcg, CsrMatrix, DenseMatrix, LinearOperator, PrecondKind,
    Preconditioner,
};
use crate::prox::{JacobianSelection, ProxOperator};

/// How Newton systems are solved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LinearSolver {
    /// Dense Cholesky of the assembled Jacobian.
    Direct,
    Pcg {
        rel_tol: f64,
        max_iter: usize,
        precond: PrecondKind,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsnConfig {
    pub nu: f64,
    pub delta: f64,
    pub j_max: usize,
    pub residual_tol: f64,
    pub linear_solver: LinearSolver,
    pub r_max: usize,
}

impl Default for SsnConfig {
    fn default() -> Self {
        Self {
            nu: 0.2,
            delta: 0.9,
            j_max: 10,
            residual_tol: 1e-8,
            linear_solver: LinearSolver::Direct,
            r_max: 50,
        }
    }
}

impl SsnConfig {
    pub fn with_pcg(precond: PrecondKind) -> Self {
        Self {
            linear_solver: LinearSolver::Pcg {
                rel_tol: 1e-8,
                max_iter: 5000,
                precond,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::InvalidParameter(format!("line-search nu {} not in (0, 1/2)", self.nu)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("line-search delta {} not in (0, 1]", self.delta)));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("residual tolerance {}", self.residual_tol)));
        }
        if let LinearSolver::Pcg { rel_tol, .. } = self.linear_solver {
            if !(rel_tol > 0.0) {
                return Err(Error::InvalidParameter(format!("pcg tolerance {rel_tol}")));
            }
        }
        Ok(())
    }
}

/// Merit value together with the magnitude of the terms summed to get it,
/// which bounds the rounding error of the value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merit {
    pub value: f64,
    pub magnitude: f64,
}

impl Merit {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            magnitude: value.abs(),
        }
    }
}

/// A symmetric positive definite Newton matrix.
pub trait NewtonMatrix: LinearOperator {
    fn diagonal(&self) -> Vec<f64>;
    fn to_csr(&self) -> CsrMatrix;
    fn to_dense(&self) -> DenseMatrix {
        self.to_csr().to_dense()
    }
}

/// A nonlinear equation `F(λ) = 0` that is the gradient of a convex merit.
pub trait SsnSubproblem {
    fn dim(&self) -> usize;
    fn residual(&self, lambda: &[f64]) -> Vec<f64>;
    fn merit(&self, lambda: &[f64]) -> Merit;
    fn jacobian<'s>(&'s self, lambda: &[f64]) -> Box<dyn NewtonMatrix + 's>;
}

/// The dual equation of one outer step.
pub struct DualSubproblem<'a> {
    a: &'a CsrMatrix,
    at: &'a CsrMatrix,
    g: &'a dyn ProxOperator,
    coef: f64,
    eta: f64,
    y: &'a [f64],
    z: &'a [f64],
}

impl<'a> DualSubproblem<'a> {
    /// `coef` multiplies `λ` (it is `β_{k+1}`), `eta` is the prox step.
    pub fn new(
        a: &'a CsrMatrix,
        at: &'a CsrMatrix,
        g: &'a dyn ProxOperator,
        coef: f64,
        eta: f64,
        y: &'a [f64],
        z: &'a [f64],
    ) -> Result<Self> {
        check_len("dual subproblem transpose rows", a.n_cols(), at.n_rows())?;
        check_len("dual subproblem transpose cols", a.n_rows(), at.n_cols())?;
        check_len("dual subproblem prox dimension", a.n_cols(), g.dim())?;
        check_len("dual subproblem y", a.n_cols(), y.len())?;
        check_len("dual subproblem z", a.n_rows(), z.len())?;
        if !(coef > 0.0) || !coef.is_finite() {
            return Err(Error::InvalidParameter(format!("dual coefficient {coef}")));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("prox step {eta}")));
        }
        Ok(Self {
            a,
            at,
            g,
            coef,
            eta,
            y,
            z,
        })
    }

    pub fn coef(&self) -> f64 {
        self.coef
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `w = y − ηAᵀλ`.
    pub fn argument(&self, lambda: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.y.len()];
        self.at.spmv_into(lambda, &mut w);
        for (wi, yi) in w.iter_mut().zip(self.y) {
            *wi = yi - self.eta * *wi;
        }
        w
    }

    /// Primal point `prox_{ηg}(y − ηAᵀλ)` recovered from a dual iterate.
    pub fn primal(&self, lambda: &[f64]) -> Vec<f64> {
        self.g.prox(&self.argument(lambda), self.eta)
    }

    /// Merit computed through the conjugate:
    /// `c/2‖λ‖² − ⟨z,λ⟩ + g*(prox_{g*/η}(w/η)) + ‖prox_{ηg}(w)‖²/(2η)`.
    /// Kept as a cross-check of [`SsnSubproblem::merit`].
    pub fn merit_conjugate_form(&self, lambda: &[f64]) -> f64 {
        let w = self.argument(lambda);
        let scaled: Vec<f64> = w.iter().map(|v| v / self.eta).collect();
        let s = self.g.prox_conjugate(&scaled, 1.0 / self.eta);
        let p = self.g.prox(&w, self.eta);
        0.5 * self.coef * norm_sq(lambda) - dot(self.z, lambda) + self.g.conjugate(&s) + norm_sq(&p) / (2.0 * self.eta)
    }
}

impl SsnSubproblem for DualSubproblem<'_> {
    fn dim(&self) -> usize {
        self.a.n_rows()
    }

    fn residual(&self, lambda: &[f64]) -> Vec<f64> {
        let x = self.primal(lambda);
        let mut ax = vec![0.0; self.dim()];
        self.a.spmv_into(&x, &mut ax);
        lambda
            .iter()
            .zip(&ax)
            .zip(self.z)
            .map(|((l, a), z)| self.coef * l - a - z)
            .collect()
    }

    fn merit(&self, lambda: &[f64]) -> Merit {
        let w = self.argument(lambda);
        let p = self.g.prox(&w, self.eta);
        // projecting directly keeps s inside dom g*, which (w − p)/η can miss by rounding
        let scaled: Vec<f64> = w.iter().map(|v| v / self.eta).collect();
        let s = self.g.prox_conjugate(&scaled, 1.0 / self.eta);
        let quad = 0.5 * self.coef * norm_sq(lambda);
        let lin = dot(self.z, lambda);
        let conj = self.g.conjugate(&s);
        let pn = norm_sq(&p) / (2.0 * self.eta);
        Merit {
            value: quad - lin + conj + pn,
            magnitude: quad + lin.abs() + conj.abs() + pn,
        }
    }

    fn jacobian<'s>(&'s self, lambda: &[f64]) -> Box<dyn NewtonMatrix + 's> {
        let w = self.argument(lambda);
        Box::new(DualJacobian {
            sub: self,
            sel: self.g.jacobian(&w, self.eta),
        })
    }
}

/// `cI + η·A·S·Aᵀ` for a Jacobian selection `S` of the prox.
pub struct DualJacobian<'s, 'a> {
    sub: &'s DualSubproblem<'a>,
    sel: JacobianSelection,
}

impl DualJacobian<'_, '_> {
    pub fn selection(&self) -> &JacobianSelection {
        &self.sel
    }

    /// Dense `A·S·Aᵀ` for diagonal `S`, restricted to the columns where `S` is
    /// nonzero.
    fn dense_gram_diagonal(&self) -> DenseMatrix {
        let a = self.sub.a;
        let s = &self.sel.head;
        let active: Vec<usize> = (0..s.len()).filter(|&j| s[j] != 0.0).collect();
        let mut slot = vec![usize::MAX; s.len()];
        for (k, &j) in active.iter().enumerate() {
            slot[j] = k;
        }
        let m = a.n_rows();
        let k = active.len();
        let mut b = vec![0.0; m * k];
        for i in 0..m {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if slot[c] != usize::MAX {
                    b[i * k + slot[c]] = v * s[c].sqrt();
                }
            }
        }
        let row_of = |i: usize| -> Vec<f64> {
            let bi = &b[i * k..(i + 1) * k];
            (0..=i)
                .map(|l| bi.iter().zip(&b[l * k..(l + 1) * k]).map(|(x, y)| x * y).sum())
                .collect()
        };
        #[cfg(feature = "parallel")]
        let lower: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            (0..m).into_par_iter().map(row_of).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let lower: Vec<Vec<f64>> = (0..m).map(row_of).collect();
        let mut g = DenseMatrix::zeros(m, m);
        for (i, row) in lower.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                g[(i, l)] = v;
                g[(l, i)] = v;
            }
        }
        g
    }
}

impl LinearOperator for DualJacobian<'_, '_> {
    fn dim(&self) -> usize {
        self.sub.a.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.sub.a.n_cols();
        let mut t = vec![0.0; n];
        self.sub.at.spmv_into(x, &mut t);
        let mut st = vec![0.0; n];
        self.sel.apply(&t, &mut st);
        self.sub.a.spmv_into(&st, y);
        let (c, eta) = (self.sub.coef, self.sub.eta);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = c * xi + eta * *yi;
        }
    }
}

impl NewtonMatrix for DualJacobian<'_, '_> {
    fn diagonal(&self) -> Vec<f64> {
        let a = self.sub.a;
        let h = self.sel.head.len();
        let nb = self.sel.blocks.len();
        let b = &self.sel.blocks;
        let sdiag = self.sel.diag();
        (0..a.n_rows())
            .map(|i| {
                let (cols, vals) = a.row(i);
                let mut d = 0.0;
                for (idx, (&c, &v)) in cols.iter().zip(vals).enumerate() {
                    d += v * v * sdiag[c];
                    if c >= h && c < h + nb {
                        let partner = c + nb;
                        if let Ok(pos) = cols[idx + 1..].binary_search(&partner) {
                            let w = vals[idx + 1 + pos];
                            let j = c - h;
                            d += v * w * (b.t12[j] + b.t21[j]);
                        }
                    }
                }
                self.sub.coef + self.sub.eta * d
            })
            .collect()
    }

    fn to_csr(&self) -> CsrMatrix {
        let a = self.sub.a;
        let sat = self.sel.to_csr().matmul(self.sub.at).expect("selection matches transpose");
        let gram = a.matmul(&sat).expect("shapes agree");
        let id = CsrMatrix::identity(a.n_rows());
        gram.add_scaled(self.sub.eta, &id, self.sub.coef).expect("square")
    }

    fn to_dense(&self) -> DenseMatrix {
        if !self.sel.is_diagonal() {
            return self.to_csr().to_dense();
        }
        let mut g = self.dense_gram_diagonal();
        let m = g.n_rows();
        for i in 0..m {
            for l in 0..m {
                g[(i, l)] *= self.sub.eta;
            }
            g[(i, i)] += self.sub.coef;
        }
        g
    }
}

/// One Newton iteration of a solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SsnIteration {
    /// `‖F‖` after the step.
    pub residual_norm: f64,
    /// Line-search exponent `r` of the accepted step `δ^r d`.
    pub step_exponent: usize,
    pub linear_iters: usize,
}

#[derive(Clone, Debug)]
pub struct SsnReport {
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub initial_residual: f64,
    pub residual_norm: f64,
    pub history: Vec<SsnIteration>,
    /// Stopped at `j_max` without reaching the tolerance.
    pub hit_max: bool,
    /// Some line search ran out of trials.
    pub line_search_exhausted: bool,
}

impl SsnReport {
    pub fn linear_iters(&self) -> usize {
        self.history.iter().map(|h| h.linear_iters).sum()
    }

    /// The solve did not certify the tolerance.
    pub fn inexact(&self) -> bool {
        self.hit_max || self.line_search_exhausted
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub r: usize,
    /// No trial satisfied the Armijo test; `r = r_max` was taken anyway.
    pub exhausted: bool,
    pub merit: Merit,
}

/// Armijo backtracking: smallest `r ∈ [0, r_max]` with
/// `𝓕(λ + δʳd) ≤ 𝓕(λ) + νδʳ⟨F(λ), d⟩`.
pub fn line_search(
    sub: &dyn SsnSubproblem,
    lambda: &[f64],
    d: &[f64],
    nu: f64,
    delta: f64,
    r_max: usize,
) -> Result<LineSearchOutcome> {
    let base = sub.merit(lambda);
    if !base.value.is_finite() {
        return Err(Error::NonFinite("merit at line-search base point"));
    }
    let slope = dot(&sub.residual(lambda), d);
    Ok(armijo(sub, lambda, base, slope, d, nu, delta, r_max))
}

/// Rounding slack of a merit comparison.
fn merit_slack(a: Merit, b: Merit) -> f64 {
    64.0 * f64::EPSILON * a.magnitude.max(b.magnitude)
}

#[allow(clippy::too_many_arguments)]
fn armijo(
    sub: &dyn SsnSubproblem,
    lambda: &[f64],
    base: Merit,
    slope: f64,
    d: &[f64],
    nu: f64,
    delta: f64,
    r_max: usize,
) -> LineSearchOutcome {
    let mut trial = lambda.to_vec();
    let mut t = 1.0;
    let mut last = base;
    for r in 0..=r_max {
        trial.copy_from_slice(lambda);
        axpy(t, d, &mut trial);
        let m = sub.merit(&trial);
        last = m;
        if m.value.is_finite() && m.value <= base.value + nu * t * slope + merit_slack(base, m) {
            return LineSearchOutcome {
                r,
                exhausted: false,
                merit: m,
            };
        }
        t *= delta;
    }
    LineSearchOutcome {
        r: r_max,
        exhausted: true,
        merit: last,
    }
}

/// Solves `JF(λ) d = −F(λ)` with the configured linear solver.
pub fn newton_direction(jac: &dyn NewtonMatrix, f: &[f64], solver: &LinearSolver) -> Result<(Vec<f64>, usize)> {
    let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    match *solver {
        LinearSolver::Direct => {
            let dense = jac.to_dense();
            let chol = dense.cholesky()?;
            Ok((chol.solve(&rhs), 0))
        }
        LinearSolver::Pcg {
            rel_tol,
            max_iter,
            precond,
        } => {
            let pre = match precond {
                PrecondKind::Identity => Preconditioner::Identity,
                PrecondKind::Jacobi => jacobi_precond(&jac.diagonal())?,
                PrecondKind::IncompleteCholesky => incomplete_cholesky(&jac.to_csr())?,
            };
            let res = pcg(jac, &rhs, &pre, rel_tol, max_iter)?;
            Ok((res.x, res.iters))
        }
    }
}

/// Semi-smooth Newton iteration from `lambda0` until `‖F‖ ≤ residual_tol`
/// or `j_max` steps.
pub fn ssn_solve(sub: &dyn SsnSubproblem, lambda0: &[f64], cfg: &SsnConfig) -> Result<SsnReport> {
    check_len("ssn initial point", sub.dim(), lambda0.len())?;
    if !lambda0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ssn initial point"));
    }
    let mut lambda = lambda0.to_vec();
    let mut f = sub.residual(&lambda);
    let mut fnorm = norm(&f);
    if !fnorm.is_finite() {
        return Err(Error::NonFinite("ssn residual"));
    }
    let initial_residual = fnorm;
    let mut merit = sub.merit(&lambda);
    let mut history = Vec::new();
    let mut exhausted = false;
    let mut j = 0;
    while fnorm > cfg.residual_tol && j < cfg.j_max {
        let step = j + 1;
        let wrap = |e: Error| Error::NewtonStep {
            step,
            source: Box::new(e),
        };
        let jac = sub.jacobian(&lambda);
        let (mut d, lin) = newton_direction(jac.as_ref(), &f, &cfg.linear_solver).map_err(wrap)?;
        let mut slope = dot(&f, &d);
        if !(slope < 0.0) {
            // inexact direction lost descent; fall back to steepest descent
            d = f.iter().map(|v| -v).collect();
            slope = -fnorm * fnorm;
        }
        if !merit.value.is_finite() {
            return Err(wrap(Error::NonFinite("merit")));
        }
        let ls = armijo(sub, &lambda, merit, slope, &d, cfg.nu, cfg.delta, cfg.r_max);
        exhausted |= ls.exhausted;
        axpy(cfg.delta.powi(ls.r as i32), &d, &mut lambda);
        merit = ls.merit;
        f = sub.residual(&lambda);
        fnorm = norm(&f);
        if !fnorm.is_finite() {
            return Err(wrap(Error::NonFinite("ssn residual")));
        }
        history.push(SsnIteration {
            residual_norm: fnorm,
            step_exponent: ls.r,
            linear_iters: lin,
        });
        j = step;
    }
    Ok(SsnReport {
        lambda,
        iterations: j,
        initial_residual,
        residual_norm: fnorm,
        hit_max: fnorm > cfg.residual_tol,
        line_search_exhausted: exhausted,
        history,
    })
}
