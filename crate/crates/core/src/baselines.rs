//! Reference methods: accelerated linearized Bregman (ALB) for ℓ1-ℓ2,
//! accelerated PDHG and accelerated ADMM for ROF.
//!
//! All three report the same KKT residuals as the primal-dual schemes. Dual
//! variables are returned in the sign convention of the Lagrangian
//! `f(x) + ⟨λ, Ax − b⟩` (for ROF `⟨λ, p − A_grad u⟩`), so PDHG's dual is
//! negated on output.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::vector::{dist, norm};
use crate::linalg::{incomplete_cholesky, norm_sq_estimate_with, pcg, CsrMatrix};
use crate::pdflow::{kkt_residual_l1l2_with, kkt_residual_rof, InitialPoint, IterRecord, ScalingParams};
use crate::problems::{L1L2Instance, RofInstance};
use crate::prox::{disk_project, prox_tv, soft_threshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Alb,
    Apdhg,
    Aadmm,
}

/// Extrapolation weight `t_k = (2k+3)/(k+3)`.
pub fn alb_weight(k: usize) -> f64 {
    (2 * k + 3) as f64 / (k + 3) as f64
}

/// ALB iterate `(x_k, λ_k, λ̃_k)` plus the cached products `Aᵀλ_k`, `Aᵀλ̃_k`.
#[derive(Clone, Debug)]
pub struct AlbState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
    pub at_lambda: Vec<f64>,
    pub at_lambda_tilde: Vec<f64>,
    /// `Ax_k − b`.
    pub feas: Vec<f64>,
    pub k: usize,
}

impl AlbState {
    /// `x_0 = 0`, `λ_0 = λ̃_0 = 0`.
    pub fn zero(m: usize, n: usize, b: &[f64]) -> Self {
        AlbState {
            x: vec![0.0; n],
            lambda: vec![0.0; m],
            lambda_tilde: vec![0.0; m],
            at_lambda: vec![0.0; n],
            at_lambda_tilde: vec![0.0; n],
            feas: b.iter().map(|v| -v).collect(),
            k: 0,
        }
    }
}

/// One ALB step with `g = ‖·‖₁`:
/// `x' = prox_{g/ρ}(−Aᵀλ̃/ρ)`, `λ' = λ̃ + τ(Ax' − b)`, `λ̃' = t_kλ' + (1−t_k)λ`.
pub fn alb_step(s: &AlbState, a: &CsrMatrix, at: &CsrMatrix, b: &[f64], rho: f64, tau: f64) -> Result<AlbState> {
    check_len("alb dual", a.n_rows(), s.lambda.len())?;
    check_len("alb primal", a.n_cols(), s.x.len())?;
    let w: Vec<f64> = s.at_lambda_tilde.iter().map(|v| -v / rho).collect();
    let x = soft_threshold(&w, 1.0 / rho);
    let mut feas = vec![0.0; b.len()];
    a.spmv_into(&x, &mut feas);
    for (f, bi) in feas.iter_mut().zip(b) {
        *f -= bi;
    }
    let lambda: Vec<f64> = s.lambda_tilde.iter().zip(&feas).map(|(l, f)| l + tau * f).collect();
    let mut at_lambda = vec![0.0; x.len()];
    at.spmv_into(&lambda, &mut at_lambda);
    let t = alb_weight(s.k);
    let lambda_tilde = lambda.iter().zip(&s.lambda).map(|(n, o)| t * n + (1.0 - t) * o).collect();
    let at_lambda_tilde = at_lambda.iter().zip(&s.at_lambda).map(|(n, o)| t * n + (1.0 - t) * o).collect();
    Ok(AlbState {
        x,
        lambda,
        lambda_tilde,
        at_lambda,
        at_lambda_tilde,
        feas,
        k: s.k + 1,
    })
}

/// A-PDHG iterate `(u_k, u_{k−1}, λ_k, σ_k, τ_k, θ_k)`; `lambda` is in the
/// method's own sign convention.
#[derive(Clone, Debug)]
pub struct ApdhgState {
    pub u: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    pub theta: f64,
    pub k: usize,
}

impl ApdhgState {
    /// `σ_0 = 0`, `u_{−1} = u_0`. Requires `τ_0θ_0 ≤ 1/8`.
    pub fn new(u0: Vec<f64>, lambda0: Vec<f64>, tau0: f64, theta0: f64) -> Result<Self> {
        if !(tau0 > 0.0 && theta0 > 0.0 && tau0 * theta0 <= 0.125 * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!("A-PDHG steps τ0 = {tau0}, θ0 = {theta0} need τ0θ0 ≤ 1/8")));
        }
        Ok(ApdhgState {
            u_prev: u0.clone(),
            u: u0,
            lambda: lambda0,
            sigma: 0.0,
            tau: tau0,
            theta: theta0,
            k: 0,
        })
    }
}

/// `(σ', τ', θ') = (1/√(1+2ρτ), σ'τ, θ/σ')`.
pub fn apdhg_params(rho: f64, tau: f64, theta: f64) -> (f64, f64, f64) {
    let sigma = 1.0 / (1.0 + 2.0 * rho * tau).sqrt();
    (sigma, sigma * tau, theta / sigma)
}

pub fn apdhg_step(s: &ApdhgState, a_grad: &CsrMatrix, xi: &[f64], rho: f64) -> Result<ApdhgState> {
    let npix = xi.len();
    check_len("apdhg image", npix, s.u.len())?;
    check_len("apdhg dual", 2 * npix, s.lambda.len())?;
    let ubar: Vec<f64> = s.u.iter().zip(&s.u_prev).map(|(u, up)| u + s.sigma * (u - up)).collect();
    let mut v = vec![0.0; 2 * npix];
    a_grad.spmv_into(&ubar, &mut v);
    for (vi, li) in v.iter_mut().zip(&s.lambda) {
        *vi = li + s.theta * *vi;
    }
    let (l1, l2) = disk_project(&v[..npix], &v[npix..]);
    let lambda: Vec<f64> = l1.into_iter().chain(l2).collect();
    let atl = a_grad.spmv_t(&lambda)?;
    let den = 1.0 + rho * s.tau;
    let u: Vec<f64> = (0..npix).map(|i| (s.u[i] - s.tau * atl[i] + rho * s.tau * xi[i]) / den).collect();
    let (sigma, tau, theta) = apdhg_params(rho, s.tau, s.theta);
    Ok(ApdhgState {
        u_prev: s.u.clone(),
        u,
        lambda,
        sigma,
        tau,
        theta,
        k: s.k + 1,
    })
}

/// A-ADMM iterate `(u_k, p_k, λ_k)`.
#[derive(Clone, Debug)]
pub struct AadmmState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k: usize,
}

/// `θ_k = 2θ/(ρ(k+1))`.
pub fn aadmm_theta(theta: f64, rho: f64, k: usize) -> f64 {
    2.0 * theta / (rho * (k + 1) as f64)
}

/// Tolerances for the `(ρθ_kI + AᵀA)` solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolve {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for InnerSolve {
    fn default() -> Self {
        InnerSolve {
            rel_tol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AadmmOutcome {
    pub state: AadmmState,
    pub pcg_iters: usize,
    /// Relative residual of the linear solve.
    pub pcg_rel_res: f64,
}

/// One A-ADMM step. `ata` is `A_gradᵀA_grad`.
pub fn aadmm_step(
    s: &AadmmState,
    a_grad: &CsrMatrix,
    ata: &CsrMatrix,
    xi: &[f64],
    rho: f64,
    theta: f64,
    lin: &InnerSolve,
) -> Result<AadmmOutcome> {
    let npix = xi.len();
    check_len("aadmm image", npix, s.u.len())?;
    check_len("aadmm dual", 2 * npix, s.lambda.len())?;
    let tk = aadmm_theta(theta, rho, s.k);
    let au = a_grad.spmv(&s.u)?;
    let arg: Vec<f64> = au.iter().zip(&s.lambda).map(|(a, l)| a - tk * l).collect();
    let (p1, p2) = prox_tv(&arg[..npix], &arg[npix..], tk);
    let p: Vec<f64> = p1.into_iter().chain(p2).collect();
    let shifted: Vec<f64> = p.iter().zip(&s.lambda).map(|(pi, l)| pi + tk * l).collect();
    let mut rhs = a_grad.spmv_t(&shifted)?;
    for (r, x) in rhs.iter_mut().zip(xi) {
        *r += rho * tk * x;
    }
    let mat = ata.add_scaled(1.0, &CsrMatrix::identity(npix), rho * tk)?;
    let pre = incomplete_cholesky(&mat)?;
    let sol = pcg(&mat, &rhs, &pre, lin.rel_tol, lin.max_iter)?;
    let u = sol.x;
    let au = a_grad.spmv(&u)?;
    let lambda = s.lambda.iter().zip(p.iter().zip(&au)).map(|(l, (pi, a))| l + (pi - a) / tk).collect();
    Ok(AadmmOutcome {
        state: AadmmState {
            u,
            p,
            lambda,
            k: s.k + 1,
        },
        pcg_iters: sol.iters,
        pcg_rel_res: sol.rel_res,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineOptions {
    pub kkt_tol: f64,
    pub max_iters: usize,
    /// A-ADMM `θ ≥ ‖A‖²`.
    pub admm_theta: f64,
    pub pdhg_tau0: f64,
    pub pdhg_theta0: f64,
    pub inner: InnerSolve,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        let s = 0.125_f64.sqrt();
        BaselineOptions {
            kkt_tol: 1e-6,
            max_iters: 100_000,
            admm_theta: 8.0,
            pdhg_tau0: s,
            pdhg_theta0: s,
            inner: InnerSolve::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub method: Baseline,
    /// `x` for ℓ1-ℓ2, `u` for ROF.
    pub primal: Vec<f64>,
    pub lambda: Vec<f64>,
    pub records: Vec<IterRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub pcg_total: usize,
    /// Largest relative residual of any inner linear solve (A-ADMM only).
    pub worst_inner_residual: Option<f64>,
    pub elapsed_s: f64,
}

impl BaselineRun {
    pub fn final_kkt(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, IterRecord::kkt_max)
    }

    /// Smallest KKT residual seen over the run.
    pub fn best_kkt(&self) -> f64 {
        self.records.iter().map(IterRecord::kkt_max).fold(f64::INFINITY, f64::min)
    }
}

fn record(k: usize, kkt: crate::pdflow::Kkt, feas: f64, pcg: usize, start: &Instant) -> IterRecord {
    IterRecord {
        k,
        alpha: None,
        gamma: None,
        beta: None,
        res_x: kkt.res_x,
        res_lambda: kkt.res_lambda,
        res_p: kkt.res_p,
        feas,
        lyapunov: None,
        xi_drift: None,
        ssn_iters: 0,
        pcg_iters: pcg,
        pcg_avg: (pcg > 0).then_some(pcg as f64),
        time_s: start.elapsed().as_secs_f64(),
        inexact: false,
        restarted: false,
    }
}

/// ALB from zero with `τ = ρ/‖A‖²`.
pub fn run_alb(inst: &L1L2Instance, opts: &BaselineOptions) -> Result<BaselineRun> {
    let start = Instant::now();
    let a = &inst.a;
    let at = a.transpose();
    let rho = inst.rho;
    let tau = rho / norm_sq_estimate_with(a, &at, 1e-10);
    let b = &inst.b;
    let mut s = AlbState::zero(a.n_rows(), a.n_cols(), b);
    let kkt = kkt_residual_l1l2_with(&s.x, &s.at_lambda, &s.feas, b, rho);
    let mut converged = kkt.max() <= opts.kkt_tol;
    let mut records = vec![record(0, kkt, norm(&s.feas), 0, &start)];
    while !converged && s.k < opts.max_iters {
        s = alb_step(&s, a, &at, b, rho, tau)?;
        let kkt = kkt_residual_l1l2_with(&s.x, &s.at_lambda, &s.feas, b, rho);
        if !kkt.max().is_finite() {
            return Err(Error::Outer {
                iteration: s.k,
                source: Box::new(Error::NonFinite("alb residual")),
            });
        }
        converged = kkt.max() <= opts.kkt_tol;
        records.push(record(s.k, kkt, norm(&s.feas), 0, &start));
    }
    Ok(BaselineRun {
        method: Baseline::Alb,
        primal: s.x,
        lambda: s.lambda,
        records,
        converged,
        iterations: s.k,
        pcg_total: 0,
        worst_inner_residual: None,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// A-PDHG from `u_0 = ξ`, `λ_0 = 0`. The KKT residual is evaluated at
/// `(u, p = A_grad u, −λ)`.
pub fn run_apdhg(inst: &RofInstance, opts: &BaselineOptions) -> Result<BaselineRun> {
    let start = Instant::now();
    let (a, xi, rho) = (&inst.a_grad, &inst.xi, inst.rho);
    let mut s = ApdhgState::new(xi.clone(), vec![0.0; 2 * xi.len()], opts.pdhg_tau0, opts.pdhg_theta0)?;
    let eval = |s: &ApdhgState| -> Result<crate::pdflow::Kkt> {
        let p = a.spmv(&s.u)?;
        let lam: Vec<f64> = s.lambda.iter().map(|v| -v).collect();
        Ok(kkt_residual_rof(&s.u, &p, &lam, a, xi, rho))
    };
    let kkt = eval(&s)?;
    let mut converged = kkt.max() <= opts.kkt_tol;
    let mut records = vec![record(0, kkt, 0.0, 0, &start)];
    while !converged && s.k < opts.max_iters {
        s = apdhg_step(&s, a, xi, rho)?;
        let kkt = eval(&s)?;
        if !kkt.max().is_finite() {
            return Err(Error::Outer {
                iteration: s.k,
                source: Box::new(Error::NonFinite("apdhg residual")),
            });
        }
        converged = kkt.max() <= opts.kkt_tol;
        records.push(record(s.k, kkt, 0.0, 0, &start));
    }
    Ok(BaselineRun {
        method: Baseline::Apdhg,
        primal: s.u,
        lambda: s.lambda.iter().map(|v| -v).collect(),
        records,
        converged,
        iterations: s.k,
        pcg_total: 0,
        worst_inner_residual: None,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// A-ADMM from `u_0 = ξ`, `p_0 = A_grad ξ`, `λ_0 = 0`.
pub fn run_aadmm(inst: &RofInstance, opts: &BaselineOptions) -> Result<BaselineRun> {
    run_aadmm_full(inst, opts).map(|(run, _)| run)
}

fn run_aadmm_full(inst: &RofInstance, opts: &BaselineOptions) -> Result<(BaselineRun, Vec<f64>)> {
    let start = Instant::now();
    let (a, xi, rho) = (&inst.a_grad, &inst.xi, inst.rho);
    let at = a.transpose();
    let ata = at.matmul(a)?;
    let mut s = AadmmState {
        u: xi.clone(),
        p: a.spmv(xi)?,
        lambda: vec![0.0; 2 * xi.len()],
        k: 0,
    };
    let eval = |s: &AadmmState| -> Result<(crate::pdflow::Kkt, f64)> {
        let au = a.spmv(&s.u)?;
        Ok((kkt_residual_rof(&s.u, &s.p, &s.lambda, a, xi, rho), dist(&s.p, &au)))
    };
    let (kkt, feas) = eval(&s)?;
    let mut converged = kkt.max() <= opts.kkt_tol;
    let mut records = vec![record(0, kkt, feas, 0, &start)];
    let (mut pcg_total, mut worst) = (0, 0.0_f64);
    while !converged && s.k < opts.max_iters {
        let out = aadmm_step(&s, a, &ata, xi, rho, opts.admm_theta, &opts.inner).map_err(|e| Error::Outer {
            iteration: s.k + 1,
            source: Box::new(e),
        })?;
        s = out.state;
        pcg_total += out.pcg_iters;
        worst = worst.max(out.pcg_rel_res);
        let (kkt, feas) = eval(&s)?;
        if !kkt.max().is_finite() {
            return Err(Error::Outer {
                iteration: s.k,
                source: Box::new(Error::NonFinite("aadmm residual")),
            });
        }
        converged = kkt.max() <= opts.kkt_tol;
        records.push(record(s.k, kkt, feas, out.pcg_iters, &start));
    }
    let run = BaselineRun {
        method: Baseline::Aadmm,
        primal: s.u,
        lambda: s.lambda,
        records,
        converged,
        iterations: s.k,
        pcg_total,
        worst_inner_residual: Some(worst),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok((run, s.p))
}

/// Im-PD starting point for ROF: `steps` A-ADMM iterations give
/// `X₀ = (u, p)` and `λ₀`; the scaling starts at `γ₀ = β₀`.
pub fn rof_warm_start(inst: &RofInstance, steps: usize, beta0: f64, opts: &BaselineOptions) -> Result<(InitialPoint, BaselineRun)> {
    if !(beta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("β0 = {beta0} must be positive")));
    }
    let warm = BaselineOptions {
        max_iters: steps,
        kkt_tol: 0.0,
        ..opts.clone()
    };
    let (run, p) = run_aadmm_full(inst, &warm)?;
    let x = run.primal.iter().chain(&p).copied().collect();
    let init = InitialPoint {
        x,
        lambda: run.lambda.clone(),
        params: ScalingParams {
            gamma: beta0,
            beta: beta0,
            mu: 0.0,
            lip: 0.0,
        },
    };
    Ok((init, run))
}

/// ℓ1-ℓ2 starting point from `steps` ALB iterations.
pub fn l1l2_warm_start(inst: &L1L2Instance, steps: usize, params: ScalingParams) -> Result<(InitialPoint, BaselineRun)> {
    let warm = BaselineOptions {
        max_iters: steps,
        kkt_tol: 0.0,
        ..BaselineOptions::default()
    };
    let run = run_alb(inst, &warm)?;
    let init = InitialPoint {
        x: run.primal.clone(),
        lambda: run.lambda.clone(),
        params,
    };
    Ok((init, run))
}
