//! Outer primal-dual solvers: the implicit scheme (Im-PD) and the
//! semi-implicit proximal-gradient scheme (Semi-PDPG), with their parameter
//! schedules, KKT residuals, Lyapunov diagnostics and run drivers.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::vector::{dist, dot, norm, norm_sq, sub};
use crate::linalg::{CsrMatrix, DenseMatrix, PrecondKind};
use crate::problems::{rof_constraint, L1L2Instance, RofInstance};
use crate::prox::{prox_tv, soft_threshold, ElasticNet, L1Norm, ProxOperator, RofObjective};
use crate::ssn::{ssn_solve, DualSubproblem, LinearSolver, SsnConfig, SsnReport};

/// Scalars driving both schemes: `γ`, `β`, the convexity modulus `μ` and the
/// Lipschitz constant `L` of the smooth part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub lip: f64,
}

/// `β' = β/(1+α)`, `γ' = (μα + γ)/(1+α)`.
pub fn impd_param_update(p: &ScalingParams, alpha: f64) -> ScalingParams {
    debug_assert!(alpha > 0.0);
    ScalingParams {
        beta: p.beta / (1.0 + alpha),
        gamma: (p.mu * alpha + p.gamma) / (1.0 + alpha),
        ..*p
    }
}

/// `β' = β(1−α)`, `γ' = μα + (1−α)γ`.
pub fn semi_param_update(p: &ScalingParams, alpha: f64) -> Result<ScalingParams> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("step size {alpha} not in (0, 1]")));
    }
    Ok(ScalingParams {
        beta: p.beta * (1.0 - alpha),
        gamma: p.mu * alpha + (1.0 - alpha) * p.gamma,
        ..*p
    })
}

/// `α = 2γ/Δ` with `σ = L + 2γ − μ` and `Δ = σ + √(σ² + 4γ(μ − γ))`, the
/// root of `α(L + γ') = γ'`.
pub fn semi_step_size(p: &ScalingParams) -> f64 {
    let sigma = p.lip + 2.0 * p.gamma - p.mu;
    let disc = sigma * sigma + 4.0 * p.gamma * (p.mu - p.gamma);
    assert!(disc >= 0.0, "negative discriminant {disc} for {p:?}");
    2.0 * p.gamma / (sigma + disc.sqrt())
}

/// The two applications.
#[derive(Clone, Debug)]
pub enum Model {
    /// `f(x) = (ρ/2)‖x‖² + ‖x‖₁`.
    L1L2 { rho: f64 },
    /// `f(u, p) = (ρ/2)‖u − ξ‖² + ψ(p)` with constraint `p = A_grad u`.
    Rof { rho: f64, xi: Vec<f64>, a_grad: CsrMatrix },
}

/// `min f(x) s.t. Ax = b` with the prox pieces each scheme needs.
pub struct Problem {
    a: CsrMatrix,
    at: CsrMatrix,
    b: Vec<f64>,
    model: Model,
    full: Box<dyn ProxOperator>,
    nonsmooth: Option<Box<dyn ProxOperator>>,
}

impl Problem {
    pub fn l1l2(inst: &L1L2Instance) -> Self {
        let n = inst.a.n_cols();
        Self {
            at: inst.a.transpose(),
            a: inst.a.clone(),
            b: inst.b.clone(),
            model: Model::L1L2 { rho: inst.rho },
            full: Box::new(ElasticNet { n, rho: inst.rho }),
            nonsmooth: Some(Box::new(L1Norm { n })),
        }
    }

    /// Split ROF model on `X = (u, p)` with constraint `(−A_grad, I)X = 0`.
    pub fn rof(inst: &RofInstance) -> Self {
        let a = rof_constraint(&inst.a_grad);
        Self {
            at: a.transpose(),
            b: vec![0.0; a.n_rows()],
            a,
            model: Model::Rof {
                rho: inst.rho,
                xi: inst.xi.clone(),
                a_grad: inst.a_grad.clone(),
            },
            full: Box::new(RofObjective {
                rho: inst.rho,
                xi: inst.xi.clone(),
            }),
            nonsmooth: None,
        }
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn at(&self) -> &CsrMatrix {
        &self.at
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn n_primal(&self) -> usize {
        self.a.n_cols()
    }

    pub fn n_dual(&self) -> usize {
        self.a.n_rows()
    }

    pub fn full_prox(&self) -> &dyn ProxOperator {
        self.full.as_ref()
    }

    /// Inner-solver settings used by default for this model.
    pub fn default_ssn(&self) -> SsnConfig {
        match &self.model {
            Model::L1L2 { .. } => SsnConfig {
                j_max: 100,
                r_max: 200,
                ..SsnConfig::default()
            },
            Model::Rof { .. } => SsnConfig {
                j_max: 100,
                r_max: 400,
                ..SsnConfig::with_pcg(PrecondKind::IncompleteCholesky)
            },
        }
    }

    /// Constants `(L, μ)` of the smooth part `h`.
    pub fn smooth_constants(&self) -> (f64, f64) {
        match &self.model {
            Model::L1L2 { rho } => (*rho, *rho),
            Model::Rof { rho, .. } => (*rho, 0.0),
        }
    }

    pub fn smooth_value(&self, x: &[f64]) -> f64 {
        match &self.model {
            Model::L1L2 { rho } => 0.5 * rho * norm_sq(x),
            Model::Rof { rho, xi, .. } => 0.5 * rho * norm_sq(&sub(&x[..xi.len()], xi)),
        }
    }

    pub fn smooth_grad(&self, x: &[f64]) -> Vec<f64> {
        match &self.model {
            Model::L1L2 { rho } => x.iter().map(|v| rho * v).collect(),
            Model::Rof { rho, xi, .. } => {
                let mut g = vec![0.0; x.len()];
                for i in 0..xi.len() {
                    g[i] = rho * (x[i] - xi[i]);
                }
                g
            }
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.full.value(x)
    }

    /// `f(x) − f(x_ref)` summed term by term so the result is accurate when
    /// the two points are close.
    pub fn objective_gap(&self, x: &[f64], x_ref: &[f64]) -> f64 {
        match &self.model {
            Model::L1L2 { rho } => x
                .iter()
                .zip(x_ref)
                .map(|(a, b)| (a.abs() - b.abs()) + 0.5 * rho * (a - b) * (a + b))
                .sum(),
            Model::Rof { rho, xi, .. } => {
                let n = xi.len();
                let mut s = 0.0;
                for i in 0..n {
                    s += 0.5 * rho * (x[i] - x_ref[i]) * (x[i] + x_ref[i] - 2.0 * xi[i]);
                    let r = x[n + i].hypot(x[2 * n + i]);
                    let r_ref = x_ref[n + i].hypot(x_ref[2 * n + i]);
                    s += r - r_ref;
                }
                s
            }
        }
    }

    /// `Ax − b`.
    pub fn feasibility(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_dual()];
        self.a.spmv_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    pub fn kkt(&self, x: &[f64], lambda: &[f64]) -> Kkt {
        match &self.model {
            Model::L1L2 { rho } => kkt_residual_l1l2(x, lambda, &self.at, &self.feasibility(x), &self.b, *rho),
            Model::Rof { rho, xi, a_grad } => {
                let n = xi.len();
                kkt_residual_rof(&x[..n], &x[n..], lambda, a_grad, xi, *rho)
            }
        }
    }
}

/// Relative KKT residuals; `res_p` only for ROF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    pub res_x: f64,
    pub res_lambda: f64,
    pub res_p: Option<f64>,
}

impl Kkt {
    pub fn max(&self) -> f64 {
        self.res_x.max(self.res_lambda).max(self.res_p.unwrap_or(0.0))
    }
}

/// `Res(x) = ‖x − soft((1−ρ)x − Aᵀλ, 1)‖/(1+‖x‖)`, `Res(λ) = ‖Ax − b‖/(1+‖b‖)`.
/// `at` is `Aᵀ` and `feas` the precomputed `Ax − b`.
pub fn kkt_residual_l1l2(x: &[f64], lambda: &[f64], at: &CsrMatrix, feas: &[f64], b: &[f64], rho: f64) -> Kkt {
    let mut v = vec![0.0; x.len()];
    at.spmv_into(lambda, &mut v);
    kkt_residual_l1l2_with(x, &v, feas, b, rho)
}

/// Same as [`kkt_residual_l1l2`] with `Aᵀλ` already computed.
pub fn kkt_residual_l1l2_with(x: &[f64], at_lambda: &[f64], feas: &[f64], b: &[f64], rho: f64) -> Kkt {
    let mut v = at_lambda.to_vec();
    for (vi, xi) in v.iter_mut().zip(x) {
        *vi = (1.0 - rho) * xi - *vi;
    }
    let s = soft_threshold(&v, 1.0);
    Kkt {
        res_x: dist(x, &s) / (1.0 + norm(x)),
        res_lambda: norm(feas) / (1.0 + norm(b)),
        res_p: None,
    }
}

/// ROF residuals for `u`, `p = [p₁; p₂]` and `λ`:
/// `‖ρ(u−ξ) − A_gradᵀλ‖/(1+‖ξ‖)`, `‖p − prox_ψ(p−λ)‖/(1+‖p‖)`,
/// `‖p − A_grad u‖/(1+‖p‖)`.
pub fn kkt_residual_rof(u: &[f64], p: &[f64], lambda: &[f64], a_grad: &CsrMatrix, xi: &[f64], rho: f64) -> Kkt {
    let n = u.len();
    let atl = a_grad.spmv_t(lambda).expect("dual length matches gradient rows");
    let ru: Vec<f64> = (0..n).map(|i| rho * (u[i] - xi[i]) - atl[i]).collect();
    let d: Vec<f64> = p.iter().zip(lambda).map(|(a, b)| a - b).collect();
    let (s1, s2) = prox_tv(&d[..n], &d[n..], 1.0);
    let rp: f64 = p[..n]
        .iter()
        .zip(&s1)
        .chain(p[n..].iter().zip(&s2))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let au = a_grad.spmv(u).expect("image length matches gradient columns");
    let pn = norm(p);
    Kkt {
        res_x: norm(&ru) / (1.0 + norm(xi)),
        res_lambda: dist(p, &au) / (1.0 + pn),
        res_p: Some(rp / (1.0 + pn)),
    }
}

/// Current iterate with its cached constraint residual `Ax − b`.
#[derive(Clone, Debug)]
pub struct SaddleState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    residual: Vec<f64>,
}

impl SaddleState {
    pub fn new(prob: &Problem, x: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_len("primal iterate", prob.n_primal(), x.len())?;
        check_len("dual iterate", prob.n_dual(), lambda.len())?;
        let residual = prob.feasibility(&x);
        Ok(Self { x, lambda, residual })
    }

    /// Cached `Ax − b`.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// `λ − (Ax − b)/β`, invariant under exact steps of both schemes.
    pub fn conserved(&self, beta: f64) -> Vec<f64> {
        self.lambda
            .iter()
            .zip(&self.residual)
            .map(|(l, r)| l - r / beta)
            .collect()
    }
}

/// A primal-dual pair, typically a high-accuracy saddle point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saddle {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// `E = f(x) − f(x*) + ⟨λ*, Ax − b⟩ + (β/2)‖λ − λ*‖² + (γ/2)‖x − x*‖²`,
/// with `⟨λ*, Ax − b⟩` evaluated as `⟨λ*, A(x − x*)⟩`.
pub fn lyapunov(prob: &Problem, s: &SaddleState, p: &ScalingParams, reference: &Saddle) -> f64 {
    let dx = sub(&s.x, &reference.x);
    let mut adx = vec![0.0; prob.n_dual()];
    prob.a.spmv_into(&dx, &mut adx);
    prob.objective_gap(&s.x, &reference.x)
        + dot(&reference.lambda, &adx)
        + 0.5 * p.beta * norm_sq(&sub(&s.lambda, &reference.lambda))
        + 0.5 * p.gamma * norm_sq(&dx)
}

/// Restart when `β ≤ threshold` and the latest KKT residual went up.
pub fn restart_policy(history: &[f64], beta: f64, threshold: f64) -> bool {
    match history {
        [.., prev, last] => beta <= threshold && last > prev,
        _ => false,
    }
}

/// Result of one outer step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: SaddleState,
    pub params: ScalingParams,
    pub alpha: f64,
    pub ssn: SsnReport,
}

/// `z = β'(λ − (Ax − b)/β) − b`.
fn shifted_target(s: &SaddleState, beta: f64, beta_next: f64, b: &[f64]) -> Vec<f64> {
    s.conserved(beta)
        .iter()
        .zip(b)
        .map(|(c, bi)| beta_next * c - bi)
        .collect()
}

/// One implicit step: update `(β, γ)`, solve
/// `β'λ − A·prox_{θf}(x − θAᵀλ) = z` with `θ = α/γ`, then take the prox.
pub fn impd_step(prob: &Problem, s: &SaddleState, p: &ScalingParams, alpha: f64, cfg: &SsnConfig) -> Result<StepOutcome> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("step size {alpha}")));
    }
    let next = impd_param_update(p, alpha);
    let theta = alpha / p.gamma;
    let z = shifted_target(s, p.beta, next.beta, &prob.b);
    let sub = DualSubproblem::new(&prob.a, &prob.at, prob.full.as_ref(), next.beta, theta, &s.x, &z)?;
    let rep = ssn_solve(&sub, &s.lambda, cfg)?;
    let x = sub.primal(&rep.lambda);
    let state = SaddleState::new(prob, x, rep.lambda.clone())?;
    Ok(StepOutcome {
        state,
        params: next,
        alpha,
        ssn: rep,
    })
}

/// One semi-implicit step: explicit gradient step on `h`, implicit prox on
/// `g`, with the step size fixed by `α(L + γ') = γ'`.
pub fn semi_pdpg_step(prob: &Problem, s: &SaddleState, p: &ScalingParams, cfg: &SsnConfig) -> Result<StepOutcome> {
    let g = prob
        .nonsmooth
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("problem has no smooth + nonsmooth split".into()))?;
    let alpha = semi_step_size(p);
    let next = semi_param_update(p, alpha)?;
    let eta = alpha / next.gamma;
    let grad = prob.smooth_grad(&s.x);
    let y: Vec<f64> = s.x.iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
    let z = shifted_target(s, p.beta, next.beta, &prob.b);
    let sub = DualSubproblem::new(&prob.a, &prob.at, g, next.beta, eta, &y, &z)?;
    let rep = ssn_solve(&sub, &s.lambda, cfg)?;
    let x = sub.primal(&rep.lambda);
    let state = SaddleState::new(prob, x, rep.lambda.clone())?;
    Ok(StepOutcome {
        state,
        params: next,
        alpha,
        ssn: rep,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImPd,
    SemiPdpg,
}

/// Step-size rule for the implicit scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    /// `α = low + width·U[0,1)`.
    Uniform { low: f64, width: f64 },
    Fixed { alpha: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Uniform { low: 1.0, width: 1.0 }
    }
}

impl StepRule {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            StepRule::Uniform { low, width } => low + width * rng.random::<f64>(),
            StepRule::Fixed { alpha } => alpha,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub scheme: Scheme,
    /// Stop once the largest KKT residual is at most this.
    pub kkt_tol: f64,
    pub max_iters: usize,
    pub ssn: SsnConfig,
    pub step_rule: StepRule,
    pub seed: u64,
    /// Restart threshold on `β`; `None` disables restarts.
    pub restart_threshold: Option<f64>,
    /// Saddle point used for the Lyapunov column.
    pub reference: Option<Saddle>,
}

impl RunOptions {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            kkt_tol: 1e-6,
            max_iters: 100_000,
            ssn: SsnConfig::default(),
            step_rule: StepRule::default(),
            seed: 0,
            restart_threshold: None,
            reference: None,
        }
    }
}

/// Starting point and parameters.
#[derive(Clone, Debug)]
pub struct InitialPoint {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub params: ScalingParams,
}

/// `β₀ ∈ (0, 1]` uniform, `x₀, λ₀` standard normal, `γ₀ = μ + U[0,1]`.
pub fn random_initial_point(prob: &Problem, mu: f64, lip: f64, seed: u64) -> InitialPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = 1.0 - rng.random::<f64>();
    let gamma = mu + rng.random::<f64>();
    let x = (0..prob.n_primal()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let lambda = (0..prob.n_dual()).map(|_| StandardNormal.sample(&mut rng)).collect();
    InitialPoint {
        x,
        lambda,
        params: ScalingParams { gamma, beta, mu, lip },
    }
}

/// Diagnostics of one outer iteration (`k = 0` is the starting point).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub k: usize,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub res_x: f64,
    pub res_lambda: f64,
    pub res_p: Option<f64>,
    /// `‖Ax − b‖`.
    pub feas: f64,
    pub lyapunov: Option<f64>,
    /// `‖ξ_k − ξ_base‖/(1 + ‖ξ_base‖)` for the conserved `ξ = λ − (Ax−b)/β`.
    pub xi_drift: Option<f64>,
    pub ssn_iters: usize,
    pub pcg_iters: usize,
    pub pcg_avg: Option<f64>,
    pub time_s: f64,
    /// The inner solve stopped before its tolerance.
    pub inexact: bool,
    pub restarted: bool,
}

impl IterRecord {
    pub fn kkt_max(&self) -> f64 {
        self.res_x.max(self.res_lambda).max(self.res_p.unwrap_or(0.0))
    }
}

pub const CSV_HEADER: &str = "k,alpha,gamma,beta,res_x,res_lambda,res_p,feas,lyapunov,xi_drift,ssn_iters,pcg_avg,time_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Diagnostics as CSV with [`CSV_HEADER`].
pub fn write_records_csv<W: Write>(records: &[IterRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            opt(r.alpha),
            opt(r.gamma),
            opt(r.beta),
            r.res_x,
            r.res_lambda,
            opt(r.res_p),
            r.feas,
            opt(r.lyapunov),
            opt(r.xi_drift),
            r.ssn_iters,
            opt(r.pcg_avg),
            r.time_s
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub state: SaddleState,
    pub params: ScalingParams,
    pub records: Vec<IterRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub ssn_total: usize,
    pub pcg_total: usize,
    pub restarts: usize,
    pub elapsed_s: f64,
}

impl RunResult {
    pub fn final_kkt(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, IterRecord::kkt_max)
    }
}

/// Runs the chosen scheme from `init` until the KKT tolerance or
/// `max_iters`.
pub fn solve(prob: &Problem, init: &InitialPoint, opts: &RunOptions) -> Result<RunResult> {
    opts.ssn.validate()?;
    let p0 = init.params;
    if !(p0.beta > 0.0 && p0.gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("initial β = {}, γ = {} must be positive", p0.beta, p0.gamma)));
    }
    let start = Instant::now();
    // offset stream so step sizes do not correlate with the initial point
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5DEE_CE66_D1CE_4E5D);
    let mut state = SaddleState::new(prob, init.x.clone(), init.lambda.clone())?;
    let mut params = p0;
    let mut xi_base = state.conserved(params.beta);
    let mut xi_base_norm = norm(&xi_base);
    let kkt0 = prob.kkt(&state.x, &state.lambda);
    let mut records = vec![IterRecord {
        k: 0,
        alpha: None,
        gamma: Some(params.gamma),
        beta: Some(params.beta),
        res_x: kkt0.res_x,
        res_lambda: kkt0.res_lambda,
        res_p: kkt0.res_p,
        feas: norm(state.residual()),
        lyapunov: opts.reference.as_ref().map(|r| lyapunov(prob, &state, &params, r)),
        xi_drift: Some(0.0),
        ssn_iters: 0,
        pcg_iters: 0,
        pcg_avg: None,
        time_s: 0.0,
        inexact: false,
        restarted: false,
    }];
    let mut history = vec![kkt0.max()];
    let (mut ssn_total, mut pcg_total, mut restarts) = (0, 0, 0);
    let mut converged = kkt0.max() <= opts.kkt_tol;
    let mut k = 0;
    while !converged && k < opts.max_iters {
        let out = match opts.scheme {
            Scheme::ImPd => impd_step(prob, &state, &params, opts.step_rule.draw(&mut rng), &opts.ssn),
            Scheme::SemiPdpg => semi_pdpg_step(prob, &state, &params, &opts.ssn),
        }
        .map_err(|e| Error::Outer {
            iteration: k + 1,
            source: Box::new(e),
        })?;
        k += 1;
        state = out.state;
        params = out.params;
        let kkt = prob.kkt(&state.x, &state.lambda);
        let xi = state.conserved(params.beta);
        let drift = dist(&xi, &xi_base) / (1.0 + xi_base_norm);
        let lin = out.ssn.linear_iters();
        ssn_total += out.ssn.iterations;
        pcg_total += lin;
        history.push(kkt.max());
        let uses_pcg = matches!(opts.ssn.linear_solver, LinearSolver::Pcg { .. });
        let mut rec = IterRecord {
            k,
            alpha: Some(out.alpha),
            gamma: Some(params.gamma),
            beta: Some(params.beta),
            res_x: kkt.res_x,
            res_lambda: kkt.res_lambda,
            res_p: kkt.res_p,
            feas: norm(state.residual()),
            lyapunov: opts.reference.as_ref().map(|r| lyapunov(prob, &state, &params, r)),
            xi_drift: Some(drift),
            ssn_iters: out.ssn.iterations,
            pcg_iters: lin,
            pcg_avg: (uses_pcg && out.ssn.iterations > 0).then(|| lin as f64 / out.ssn.iterations as f64),
            time_s: start.elapsed().as_secs_f64(),
            inexact: out.ssn.inexact(),
            restarted: false,
        };
        converged = kkt.max() <= opts.kkt_tol;
        if !converged {
            if let Some(thr) = opts.restart_threshold {
                if restart_policy(&history, params.beta, thr) {
                    params.gamma = p0.gamma;
                    params.beta = p0.beta;
                    xi_base = state.conserved(params.beta);
                    xi_base_norm = norm(&xi_base);
                    restarts += 1;
                    rec.restarted = true;
                }
            }
        }
        records.push(rec);
    }
    Ok(RunResult {
        state,
        params,
        records,
        converged,
        iterations: k,
        ssn_total,
        pcg_total,
        restarts,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// High-accuracy saddle point: Im-PD with dense Newton solves until the KKT
/// residual reaches `tol`, then (for ℓ1-ℓ2) an exact solve of the optimality
/// system on the detected support.
pub fn reference_saddle(prob: &Problem, tol: f64, seed: u64) -> Result<Saddle> {
    let init = random_initial_point(prob, 0.0, 0.0, seed);
    let mut opts = RunOptions::new(Scheme::ImPd);
    opts.kkt_tol = tol;
    opts.max_iters = 500;
    opts.step_rule = StepRule::Fixed { alpha: 1.0 };
    opts.ssn = SsnConfig {
        residual_tol: 1e-14,
        j_max: 100,
        ..SsnConfig::default()
    };
    let run = solve(prob, &init, &opts)?;
    let raw = Saddle {
        x: run.state.x,
        lambda: run.state.lambda,
    };
    if let Model::L1L2 { rho } = prob.model {
        if let Some(polished) = polish_l1l2(prob, &raw, rho) {
            let k0 = prob.kkt(&raw.x, &raw.lambda).max();
            let k1 = prob.kkt(&polished.x, &polished.lambda).max();
            if k1 <= k0 {
                return Ok(polished);
            }
        }
    }
    Ok(raw)
}

/// Solves `ρx_S + s + A_Sᵀλ = 0`, `A_S x_S = b` for the support `S` and
/// signs `s` of `approx.x`. Returns `None` if the support is too small or the
/// result is inconsistent with the signs.
fn polish_l1l2(prob: &Problem, approx: &Saddle, rho: f64) -> Option<Saddle> {
    let scale = approx.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let support: Vec<usize> = (0..approx.x.len()).filter(|&j| approx.x[j].abs() > 1e-9 * scale.max(1.0)).collect();
    let m = prob.n_dual();
    if support.len() < m {
        return None;
    }
    let sign: Vec<f64> = support.iter().map(|&j| approx.x[j].signum()).collect();
    let dense = prob.a.to_dense();
    let mut gram = DenseMatrix::zeros(m, m);
    let mut rhs: Vec<f64> = prob.b.iter().map(|v| -rho * v).collect();
    for i in 0..m {
        for l in 0..=i {
            let v: f64 = support.iter().map(|&j| dense[(i, j)] * dense[(l, j)]).sum();
            gram[(i, l)] = v;
            gram[(l, i)] = v;
        }
        rhs[i] -= support.iter().zip(&sign).map(|(&j, s)| dense[(i, j)] * s).sum::<f64>();
    }
    let lambda = gram.cholesky().ok()?.solve(&rhs);
    let atl = prob.at.spmv(&lambda).ok()?;
    let mut x = vec![0.0; approx.x.len()];
    for (&j, s) in support.iter().zip(&sign) {
        x[j] = -(s + atl[j]) / rho;
        if x[j] * s <= 0.0 {
            return None;
        }
    }
    Some(Saddle { x, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gen_l1l2;

    fn params(gamma: f64, beta: f64, mu: f64, lip: f64) -> ScalingParams {
        ScalingParams { gamma, beta, mu, lip }
    }

    #[test]
    fn impd_update_examples() {
        assert_eq!(impd_param_update(&params(1.0, 1.0, 0.0, 0.0), 1.0).beta, 0.5);
        assert_eq!(impd_param_update(&params(0.3, 1.0, 0.3, 0.0), 1.7).gamma, 0.3);
        assert_eq!(impd_param_update(&params(2.0, 1.0, 0.0, 0.0), 1.0).gamma, 1.0);
    }

    #[test]
    fn semi_update_examples() {
        assert_eq!(semi_param_update(&params(1.0, 1.0, 0.0, 0.0), 0.5).unwrap().beta, 0.5);
        assert!((semi_param_update(&params(0.4, 1.0, 0.4, 1.0), 0.3).unwrap().gamma - 0.4).abs() < 1e-15);
        assert_eq!(semi_param_update(&params(1.0, 1.0, 0.0, 1.0), 0.25).unwrap().gamma, 0.75);
        assert!(semi_param_update(&params(1.0, 1.0, 0.0, 1.0), 1.5).is_err());
        assert!(semi_param_update(&params(1.0, 1.0, 0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn step_size_examples() {
        for rho in [0.01, 0.5, 3.0] {
            assert!((semi_step_size(&params(rho, 1.0, rho, rho)) - 0.5).abs() < 1e-15);
        }
        let p = params(1.0, 1.0, 0.0, 1.0);
        let a = semi_step_size(&p);
        assert!((a - 2.0 / (3.0 + 5f64.sqrt())).abs() < 1e-15);
        let g = semi_param_update(&p, a).unwrap().gamma;
        assert!((a * (1.0 + g) - g).abs() < 1e-12 * g);
        assert_eq!(semi_step_size(&params(1.0, 1.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn kkt_examples() {
        let a = CsrMatrix::identity(1);
        let k = kkt_residual_l1l2(&[0.0], &[0.5], &a, &[0.0], &[0.0], 1.0);
        assert_eq!((k.res_x, k.res_lambda), (0.0, 0.0));
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, 2.0)]).unwrap();
        let b = [3.0, 4.0];
        let feas = [-3.0, -4.0];
        let k = kkt_residual_l1l2(&[0.0; 3], &[0.0; 2], &a.transpose(), &feas, &b, 0.5);
        assert_eq!(k.res_x, 0.0);
        assert!((k.res_lambda - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rof_kkt_examples() {
        let g = crate::problems::discrete_gradient(3, 3);
        let xi = vec![7.0; 9];
        let k = kkt_residual_rof(&xi, &[0.0; 18], &[0.0; 18], &g, &xi, 2.0);
        assert_eq!((k.res_x, k.res_lambda, k.res_p), (0.0, 0.0, Some(0.0)));
        let xi: Vec<f64> = (0..9).map(|i| (i * i) as f64).collect();
        let p = g.spmv(&xi).unwrap();
        let k = kkt_residual_rof(&xi, &p, &[0.0; 18], &g, &xi, 2.0);
        assert_eq!((k.res_x, k.res_lambda), (0.0, 0.0));
        let (s1, s2) = prox_tv(&p[..9], &p[9..], 1.0);
        let mut s = s1;
        s.extend(s2);
        assert!((k.res_p.unwrap() - dist(&p, &s) / (1.0 + norm(&p))).abs() < 1e-15);
    }

    #[test]
    fn restart_policy_examples() {
        assert!(!restart_policy(&[1e-5, 2e-5], 1e-6, 1e-7));
        assert!(restart_policy(&[1e-5, 2e-5], 1e-8, 1e-7));
        assert!(!restart_policy(&[2e-5, 1e-5], 1e-8, 1e-7));
        assert!(!restart_policy(&[2e-5], 1e-8, 1e-7));
    }

    fn small() -> Problem {
        Problem::l1l2(&gen_l1l2(5, 12, 0.5, 0.5, 1).unwrap())
    }

    #[test]
    fn lyapunov_zero_at_reference_and_linear_in_weights() {
        let prob = small();
        let r = reference_saddle(&prob, 1e-12, 2).unwrap();
        assert!(prob.kkt(&r.x, &r.lambda).max() < 1e-12);
        let s = SaddleState::new(&prob, r.x.clone(), r.lambda.clone()).unwrap();
        assert_eq!(lyapunov(&prob, &s, &params(1.0, 1.0, 0.0, 0.0), &r), 0.0);
        let x: Vec<f64> = r.x.iter().map(|v| v + 0.1).collect();
        let l: Vec<f64> = r.lambda.iter().map(|v| v - 0.2).collect();
        let s = SaddleState::new(&prob, x, l).unwrap();
        let e1 = lyapunov(&prob, &s, &params(1.0, 1.0, 0.0, 0.0), &r);
        let e2 = lyapunov(&prob, &s, &params(2.0, 1.0, 0.0, 0.0), &r);
        let e3 = lyapunov(&prob, &s, &params(1.0, 2.0, 0.0, 0.0), &r);
        assert!(e1 > 0.0);
        assert!((e2 - e1 - 0.5 * 0.01 * 12.0).abs() < 1e-12);
        assert!((e3 - e1 - 0.5 * 0.04 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn impd_one_step_matches_hand_solution() {
        let inst = L1L2Instance {
            a: CsrMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap(),
            b: vec![0.0],
            rho: 1.0,
            seed: 0,
            x_true: None,
        };
        let prob = Problem::l1l2(&inst);
        let s = SaddleState::new(&prob, vec![10.0, 20.0], vec![0.0]).unwrap();
        let p = params(1.0, 1.0, 0.0, 0.0);
        let out = impd_step(&prob, &s, &p, 1.0, &SsnConfig::default()).unwrap();
        // θ = 1, β' = 1/2, z = (0 − 30)/2 = −15; on the branch x_i − θλ > θ the
        // prox is (x_i − λ − 1)/2, so F(λ) = λ/2 − (28 − 2λ)/2 + 15 = 0.
        let lam = 28.0 / 2.0 - 15.0;
        let lam = lam / (0.5 + 1.0);
        assert!((out.state.lambda[0] - lam).abs() < 1e-12);
        assert!((out.state.x[0] - (10.0 - lam - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn conservation_and_rate_on_semi_pdpg() {
        let prob = Problem::l1l2(&gen_l1l2(20, 60, 0.5, 0.1, 3).unwrap());
        let init = random_initial_point(&prob, 0.5, 0.5, 4);
        let mut opts = RunOptions::new(Scheme::SemiPdpg);
        opts.max_iters = 12;
        opts.kkt_tol = 0.0;
        opts.ssn.residual_tol = 1e-13;
        let run = solve(&prob, &init, &opts).unwrap();
        for r in &run.records {
            assert!(r.xi_drift.unwrap() < 1e-10, "drift {:?}", r.xi_drift);
            if let Some(a) = r.alpha {
                let g = r.gamma.unwrap();
                assert!((a * (0.5 + g) - g).abs() <= 1e-12 * g);
            }
        }
        let last = run.records.last().unwrap();
        assert!((last.alpha.unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn csv_layout() {
        let prob = small();
        let init = random_initial_point(&prob, 0.5, 0.5, 1);
        let mut opts = RunOptions::new(Scheme::SemiPdpg);
        opts.max_iters = 3;
        let run = solve(&prob, &init, &opts).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&run.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 13);
        assert_eq!(first[1], "");
        assert_eq!(first[6], "");
    }
}
