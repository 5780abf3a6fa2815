//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Built with `harness = false`; run with `cargo test -p pdflow --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use pdflow::baselines::{rof_warm_start, run_aadmm, run_alb, run_apdhg, BaselineOptions};
use pdflow::flowsim::{linearization_eigs, linearization_matrix, simulate, ToySystem, Variant};
use pdflow::linalg::vector::{dist, dot, norm};
use pdflow::linalg::{incomplete_cholesky, jacobi_precond, pcg, CsrMatrix, DenseMatrix, Preconditioner};
use pdflow::pdflow::{
    impd_param_update, impd_step, random_initial_point, reference_saddle, solve, IterRecord, Problem,
    RunOptions, RunResult, Saddle, SaddleState, Scheme, ScalingParams,
};
use pdflow::problems::{gen_l1l2, RofInstance, DEFAULT_NOISE, DEFAULT_SPARSITY};
use pdflow::prox::{ElasticNet, JacobianSelection, L1Norm, ProxOperator, RofObjective, TvNorm};
use pdflow::ssn::{ssn_solve, DualSubproblem, Merit, NewtonMatrix, SsnConfig, SsnSubproblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    name: &'static str,
    outcome: Outcome,
    secs: f64,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- ℓ1-ℓ2 sweep

/// (ρ, m, n, outer its, SsN total, ALB its) reported for the three instances.
const SWEEP: [(f64, usize, usize, usize, usize, usize); 3] = [
    (0.5, 500, 2000, 21, 42, 537),
    (0.1, 200, 1000, 20, 34, 2330),
    (0.01, 500, 2000, 19, 56, 13174),
];
const INSTANCE_SEED: u64 = 1;
const RUN_SEED: u64 = 1;

fn sweep_runs() -> Result<Vec<RunResult>, String> {
    SWEEP
        .iter()
        .map(|&(rho, m, n, ..)| {
            let inst = gen_l1l2(m, n, rho, DEFAULT_SPARSITY, INSTANCE_SEED).map_err(err)?;
            let prob = Problem::l1l2(&inst);
            let (lip, mu) = prob.smooth_constants();
            let init = random_initial_point(&prob, mu, lip, RUN_SEED);
            let mut opts = RunOptions::new(Scheme::SemiPdpg);
            opts.ssn = prob.default_ssn();
            opts.seed = RUN_SEED;
            solve(&prob, &init, &opts).map_err(err)
        })
        .collect()
}

fn semi_pdpg_counts(runs: &Result<Vec<RunResult>, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (r, &(rho, _, _, its, ssn, _)) in runs.iter().zip(&SWEEP) {
        let its_ok = r.converged && r.iterations.abs_diff(its) <= 5;
        let ssn_ok = r.ssn_total * 2 >= ssn && r.ssn_total <= 2 * ssn;
        ok &= its_ok && ssn_ok;
        parts.push(format!(
            "rho={rho}: its {} (want {its}±5){} SsN {} (want [{}, {}]){}",
            r.iterations,
            mark(its_ok),
            r.ssn_total,
            ssn.div_ceil(2),
            2 * ssn,
            mark(ssn_ok)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        ""
    } else {
        " [miss]"
    }
}

fn alb_counts() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut prev = 0;
    for &(rho, m, n, .., target) in &SWEEP {
        let inst = gen_l1l2(m, n, rho, DEFAULT_SPARSITY, INSTANCE_SEED).map_err(err)?;
        let run = run_alb(&inst, &BaselineOptions::default()).map_err(err)?;
        let within = run.converged && run.iterations * 2 >= target && run.iterations <= 2 * target;
        let mono = run.iterations > prev;
        ok &= within && mono;
        prev = run.iterations;
        parts.push(format!(
            "rho={rho}: {} its (want [{}, {}]){}{}",
            run.iterations,
            target.div_ceil(2),
            2 * target,
            mark(within),
            if mono { "" } else { " [not increasing]" }
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// Geometric mean ratio `(Res_K / Res_{K−10})^{1/10}` at the end of a run.
fn tail_ratio(records: &[IterRecord]) -> Option<f64> {
    let n = records.len();
    (n > 10).then(|| (records[n - 1].kkt_max() / records[n - 11].kkt_max()).powf(0.1))
}

fn rate_constant(runs: &Result<Vec<RunResult>, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (r, &(rho, ..)) in runs.iter().zip(&SWEEP) {
        match tail_ratio(&r.records) {
            Some(q) => {
                let hit = (0.4..=0.6).contains(&q);
                ok &= hit;
                parts.push(format!("rho={rho}: ratio {q:.3}{}", mark(hit)));
            }
            None => {
                ok = false;
                parts.push(format!("rho={rho}: only {} iterations", r.iterations));
            }
        }
    }
    Ok((ok, parts.join("; ")))
}

// ------------------------------------------------------- small ℓ1-ℓ2 instance

const SMALL_RHO: f64 = 0.5;

fn small_problem() -> Result<(Problem, Saddle), String> {
    let inst = gen_l1l2(5, 12, SMALL_RHO, DEFAULT_SPARSITY, 3).map_err(err)?;
    let prob = Problem::l1l2(&inst);
    let reference = reference_saddle(&prob, 1e-12, 11).map_err(err)?;
    let kkt = prob.kkt(&reference.x, &reference.lambda).max();
    if kkt > 1e-12 {
        return Err(format!("reference saddle reached only {kkt:.2e}"));
    }
    Ok((prob, reference))
}

fn exact_ssn() -> SsnConfig {
    SsnConfig {
        residual_tol: 1e-13,
        j_max: 100,
        r_max: 200,
        ..SsnConfig::default()
    }
}

fn impd_small(prob: &Problem, reference: &Saddle, iters: usize, kkt_tol: f64) -> Result<(RunResult, f64), String> {
    let init = random_initial_point(prob, 0.0, 0.0, 5);
    let mut opts = RunOptions::new(Scheme::ImPd);
    opts.kkt_tol = kkt_tol;
    opts.max_iters = iters;
    opts.ssn = exact_ssn();
    opts.seed = 5;
    opts.reference = Some(reference.clone());
    let run = solve(prob, &init, &opts).map_err(err)?;
    Ok((run, init.params.beta))
}

fn impd_contraction(small: &Result<(Problem, Saddle), String>) -> Outcome {
    let (prob, reference) = small.as_ref().map_err(Clone::clone)?;
    let (run, _) = impd_small(prob, reference, 30, 0.0)?;
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut flagged = 0;
    for w in run.records.windows(2) {
        if w[1].inexact {
            flagged += 1;
            continue;
        }
        let (e0, e1) = (w[0].lyapunov.unwrap(), w[1].lyapunov.unwrap());
        let bound = e0 / (1.0 + w[1].alpha.unwrap());
        if e1 > bound * (1.0 + 1e-8) {
            violations += 1;
        }
        worst = worst.max(e1 / bound);
    }
    Ok((
        violations == 0 && flagged == 0,
        format!(
            "30 its, {flagged} flagged, {violations} violations, max E_(k+1)(1+a_k)/E_k = {worst:.9}, E_30/E_0 = {:.2e}",
            run.records[30].lyapunov.unwrap() / run.records[0].lyapunov.unwrap()
        ),
    ))
}

fn semi_envelope(small: &Result<(Problem, Saddle), String>) -> Outcome {
    let (prob, reference) = small.as_ref().map_err(Clone::clone)?;
    let (lip, mu) = prob.smooth_constants();
    let init = random_initial_point(prob, mu, lip, 6);
    let mut opts = RunOptions::new(Scheme::SemiPdpg);
    opts.kkt_tol = 0.0;
    opts.max_iters = 50;
    opts.ssn = exact_ssn();
    opts.reference = Some(reference.clone());
    let run = solve(prob, &init, &opts).map_err(err)?;
    let g0 = init.params.gamma;
    let (g_min, g_max) = (g0.min(mu), g0.max(mu));
    let e0 = run.records[0].lyapunov.unwrap();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in &run.records[1..] {
        let k = r.k as f64;
        let env = ((lip + g_max) / (g0 * k + lip + g_max)).min((lip / (lip + g_min)).powf(k));
        let e = r.lyapunov.unwrap();
        if e > e0 * env * (1.0 + 1e-6) {
            violations += 1;
        }
        worst = worst.max(e / (e0 * env));
    }
    let flagged = run.records.iter().filter(|r| r.inexact).count();
    Ok((
        violations == 0 && run.iterations == 50,
        format!("50 its, {flagged} flagged, {violations} violations, max E_k/envelope = {worst:.6}"),
    ))
}

fn max_drift(records: &[IterRecord]) -> f64 {
    records.iter().filter_map(|r| r.xi_drift).fold(0.0, f64::max)
}

fn conservation(sweep: &Result<Vec<RunResult>, String>, small: &Result<(Problem, Saddle), String>, rof: &Result<Vec<RofRun>, String>) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut add = |label: String, d: f64| {
        let hit = d <= 1e-10;
        ok &= hit;
        parts.push(format!("{label} {d:.2e}{}", mark(hit)));
    };
    let (prob, _) = small.as_ref().map_err(Clone::clone)?;
    for scheme in [Scheme::ImPd, Scheme::SemiPdpg] {
        let (lip, mu) = match scheme {
            Scheme::ImPd => (0.0, 0.0),
            Scheme::SemiPdpg => prob.smooth_constants(),
        };
        let init = random_initial_point(prob, mu, lip, 7);
        let mut opts = RunOptions::new(scheme);
        opts.ssn = SsnConfig {
            j_max: 100,
            ..SsnConfig::default()
        };
        let run = solve(prob, &init, &opts).map_err(err)?;
        add(format!("small {scheme:?} ({} its)", run.iterations), max_drift(&run.records));
    }
    for (r, &(rho, ..)) in sweep.as_ref().map_err(Clone::clone)?.iter().zip(&SWEEP) {
        add(format!("semi-pdpg rho={rho}"), max_drift(&r.records));
    }
    for r in rof.as_ref().map_err(Clone::clone)? {
        add(format!("rof im-pd seed {}", r.seed), max_drift(&r.run.records));
    }
    Ok((ok, format!("max relative drift: {}", parts.join(", "))))
}

fn feasibility_envelope(small: &Result<(Problem, Saddle), String>) -> Outcome {
    let (prob, reference) = small.as_ref().map_err(Clone::clone)?;
    // run to the accuracy of the reference; beyond it ‖Ax − b‖ sits at its rounding floor
    let (run, beta0) = impd_small(prob, reference, 100, 1e-12)?;
    let r0 = &run.records[0];
    let init = random_initial_point(prob, 0.0, 0.0, 5);
    let e0 = r0.lyapunov.unwrap();
    let big_r = (2.0 * beta0 * e0).sqrt() + beta0 * dist(&init.lambda, &reference.lambda) + r0.feas;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in &run.records {
        let env = r.beta.unwrap() / beta0 * big_r;
        if r.feas > env * (1.0 + 1e-8) {
            violations += 1;
        }
        worst = worst.max(r.feas / env);
    }
    Ok((
        violations == 0 && run.converged,
        format!("{} its to KKT 1e-12, {violations} violations, max |Ax_k - b| / envelope = {worst:.3e}", run.iterations),
    ))
}

// ------------------------------------------------------------------------ ROF

struct RofRun {
    seed: u64,
    run: RunResult,
}

const ROF_SEEDS: [u64; 3] = [1, 2, 3];

fn rof_instance(seed: u64) -> Result<RofInstance, String> {
    RofInstance::shapes(64, 64, 20.0, DEFAULT_NOISE, seed).map_err(err)
}

fn rof_runs() -> Result<Vec<RofRun>, String> {
    ROF_SEEDS
        .iter()
        .map(|&seed| {
            let inst = rof_instance(seed)?;
            let prob = Problem::rof(&inst);
            let (init, _) = rof_warm_start(&inst, 50, 1.0, &BaselineOptions::default()).map_err(err)?;
            let mut opts = RunOptions::new(Scheme::ImPd);
            opts.ssn = prob.default_ssn();
            opts.seed = seed;
            opts.max_iters = 1000;
            let run = solve(&prob, &init, &opts).map_err(err)?;
            Ok(RofRun { seed, run })
        })
        .collect()
}

fn rof_end_to_end(rof: &Result<Vec<RofRun>, String>) -> Outcome {
    let runs = rof.as_ref().map_err(Clone::clone)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let hit = r.run.converged && (8..=14).contains(&r.run.iterations);
        ok &= hit;
        parts.push(format!("im-pd seed {}: {} its{}", r.seed, r.run.iterations, mark(hit)));
    }
    let inst = rof_instance(ROF_SEEDS[0])?;
    let admm = run_aadmm(&inst, &BaselineOptions::default()).map_err(err)?;
    let admm_ok = admm.converged && admm.iterations >= 10 * runs[0].run.iterations;
    ok &= admm_ok;
    parts.push(format!("a-admm {} its{}", admm.iterations, mark(admm_ok)));
    let opts = BaselineOptions {
        max_iters: 20_000,
        ..BaselineOptions::default()
    };
    let pdhg = run_apdhg(&inst, &opts).map_err(err)?;
    let pdhg_ok = !pdhg.converged && pdhg.best_kkt() > 1e-6;
    ok &= pdhg_ok;
    parts.push(format!("a-pdhg best Res {:.2e} after {} its{}", pdhg.best_kkt(), pdhg.iterations, mark(pdhg_ok)));
    Ok((ok, parts.join("; ")))
}

// ----------------------------------------------------------------- toy flows

/// Characteristic polynomial coefficients `(tr, Σ principal 2×2 minors, det)`.
fn char_coeffs(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0] + m[1][1] * m[2][2]
        - m[1][2] * m[2][1];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    [tr, minors, det]
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn continuous_flow() -> Outcome {
    let z0 = [0.5, 1.0, -1.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [6, 8, 10] {
        let orig = simulate(&ToySystem::new(p, Variant::Original).map_err(err)?, z0, 8.0, 1e-4).map_err(err)?;
        let modi = simulate(&ToySystem::new(p, Variant::Modified).map_err(err)?, z0, 8.0, 1e-4).map_err(err)?;
        let e0 = modi.lyapunov[0];
        let worst = modi
            .times
            .iter()
            .zip(&modi.lyapunov)
            .map(|(t, e)| e / ((-t).exp() * e0))
            .fold(0.0, f64::max);
        let decay_ok = worst <= 1.001;
        let order_ok = modi.terminal_error() < orig.terminal_error();
        ok &= decay_ok && order_ok;
        parts.push(format!(
            "p={p}: max E/(e^-t E0) {worst:.4}{}, terminal {:.2e} vs {:.2e}{}",
            mark(decay_ok),
            modi.terminal_error(),
            orig.terminal_error(),
            mark(order_ok)
        ));
    }
    let mut eig_err = 0.0_f64;
    for variant in [Variant::Original, Variant::Modified] {
        for t in [0.35, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let e = linearization_eigs(variant, t).map_err(err)?;
            let z: Vec<(f64, f64)> = e.iter().map(|v| (v.re, v.im)).collect();
            let s1 = (z[0].0 + z[1].0 + z[2].0, z[0].1 + z[1].1 + z[2].1);
            let p01 = cmul(z[0], z[1]);
            let p02 = cmul(z[0], z[2]);
            let p12 = cmul(z[1], z[2]);
            let s2 = (p01.0 + p02.0 + p12.0, p01.1 + p02.1 + p12.1);
            let s3 = cmul(p01, z[2]);
            let c = char_coeffs(&linearization_matrix(variant, t));
            let scale = 1.0 + c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (got, want) in [(s1, c[0]), (s2, c[1]), (s3, c[2])] {
                eig_err = eig_err.max(((got.0 - want).abs() + got.1.abs()) / scale);
            }
        }
    }
    let eig_ok = eig_err <= 1e-12;
    ok &= eig_ok;
    parts.push(format!("eigenvalue/char-poly mismatch {eig_err:.1e}{}", mark(eig_ok)));
    Ok((ok, parts.join("; ")))
}

// ------------------------------------------------------------------- oracles

fn golden<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..90 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Brute-force minimizer of a convex function of two variables by nested
/// golden-section search on `[c − w, c + w]²`.
fn golden2<F: Fn(f64, f64) -> f64>(f: F, c: (f64, f64), w: f64) -> (f64, f64) {
    let inner = |p: f64| golden(|q| f(p, q), c.1 - w, c.1 + w);
    let p = golden(|p| f(p, inner(p)), c.0 - w, c.0 + w);
    (p, inner(p))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn prox_brute_force(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0_f64;
    let n = 6;
    for _ in 0..5 {
        let theta = 0.1 + 2.0 * rng.random::<f64>();
        let x = random_vec(rng, n, 3.0);
        let rho = 0.1 + rng.random::<f64>();
        let xi = random_vec(rng, n, 1.0);
        // elementwise oracles for the separable pieces
        let l1 = L1Norm { n };
        let en = ElasticNet { n, rho };
        for (op, scalar) in [
            (&l1 as &dyn ProxOperator, Box::new(|v: f64| v.abs()) as Box<dyn Fn(f64) -> f64>),
            (&en, Box::new(move |v: f64| 0.5 * rho * v * v + v.abs())),
        ] {
            let got = op.prox(&x, theta);
            for (g, xi) in got.iter().zip(&x) {
                let want = golden(|y| scalar(y) + (y - xi) * (y - xi) / (2.0 * theta), xi - 10.0, xi + 10.0);
                worst = worst.max((g - want).abs());
            }
        }
        let tv = TvNorm { npix: n / 2 };
        let got = tv.prox(&x, theta);
        let rof = RofObjective { rho, xi: xi[..2].to_vec() };
        let got_rof = rof.prox(&x, theta);
        for i in 0..n / 2 {
            let (p, q) = (x[i], x[i + n / 2]);
            let want = golden2(|a, b| a.hypot(b) + ((a - p).powi(2) + (b - q).powi(2)) / (2.0 * theta), (p, q), 10.0);
            worst = worst.max((got[i] - want.0).abs()).max((got[i + n / 2] - want.1).abs());
        }
        for i in 0..2 {
            let (u, xi_i) = (x[i], xi[i]);
            let want = golden(|y| 0.5 * rho * (y - xi_i).powi(2) + (y - u).powi(2) / (2.0 * theta), u - 10.0, u + 10.0);
            worst = worst.max((got_rof[i] - want).abs());
            let (p, q) = (x[2 + i], x[4 + i]);
            let want = golden2(|a, b| a.hypot(b) + ((a - p).powi(2) + (b - q).powi(2)) / (2.0 * theta), (p, q), 10.0);
            worst = worst.max((got_rof[2 + i] - want.0).abs()).max((got_rof[4 + i] - want.1).abs());
        }
    }
    worst
}

fn moreau_identity(rng: &mut ChaCha8Rng) -> f64 {
    let n = 12;
    let ops: Vec<Box<dyn ProxOperator>> = vec![
        Box::new(L1Norm { n }),
        Box::new(ElasticNet { n, rho: 0.7 }),
        Box::new(TvNorm { npix: n / 2 }),
        Box::new(RofObjective {
            rho: 3.0,
            xi: random_vec(rng, n / 3, 1.0),
        }),
    ];
    let mut worst = 0.0_f64;
    for op in &ops {
        for _ in 0..20 {
            let theta = 0.05 + 5.0 * rng.random::<f64>();
            let x = random_vec(rng, n, 4.0);
            let p = op.prox(&x, theta);
            let scaled: Vec<f64> = x.iter().map(|v| v / theta).collect();
            let s = op.prox_conjugate(&scaled, 1.0 / theta);
            for ((xi, pi), si) in x.iter().zip(&p).zip(&s) {
                worst = worst.max((xi - pi - theta * si).abs() / (1.0 + xi.abs()));
            }
        }
    }
    worst
}

/// Least-squares slope of `log remainder` against `log h` for the first-order
/// Taylor remainder of the merit along random directions.
fn merit_taylor_slope(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let inst = gen_l1l2(8, 20, 0.5, DEFAULT_SPARSITY, 9).map_err(err)?;
    let prob = Problem::l1l2(&inst);
    let g = ElasticNet { n: 20, rho: 0.5 };
    let y = random_vec(rng, 20, 2.0);
    let z = random_vec(rng, 8, 1.0);
    let sub = DualSubproblem::new(prob.a(), prob.at(), &g, 0.3, 0.8, &y, &z).map_err(err)?;
    let mut slopes = Vec::new();
    for _ in 0..5 {
        let lam = random_vec(rng, 8, 1.0);
        let d = random_vec(rng, 8, 1.0);
        let f0 = sub.merit(&lam).value;
        let grad = sub.residual(&lam);
        let gd = dot(&grad, &d);
        let hs: Vec<f64> = (0..6).map(|i| 1e-2 / 2f64.powi(i)).collect();
        let pts: Vec<(f64, f64)> = hs
            .iter()
            .map(|&h| {
                let l: Vec<f64> = lam.iter().zip(&d).map(|(a, b)| a + h * b).collect();
                let rem = (sub.merit(&l).value - f0 - h * gd).abs();
                (h.ln(), rem.max(1e-300).ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        slopes.push(sxy / sxx);
    }
    Ok(slopes.into_iter().fold(f64::INFINITY, f64::min))
}

fn pcg_vs_dense(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst = 0.0_f64;
    for trial in 0..4 {
        let (m, n) = (30 + 10 * trial, 60 + 15 * trial);
        let mut trips = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < 0.1 {
                    trips.push((i, j, 2.0 * rng.random::<f64>() - 1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(m, n, &trips).map_err(err)?;
        let gram = a.matmul(&a.transpose()).map_err(err)?;
        let k = gram.add_scaled(1.0, &CsrMatrix::identity(m), 0.1).map_err(err)?;
        let b = random_vec(rng, m, 1.0);
        let want = k.to_dense().cholesky().map_err(err)?.solve(&b);
        let preconds = [
            Preconditioner::Identity,
            jacobi_precond(&k.diag()).map_err(err)?,
            incomplete_cholesky(&k).map_err(err)?,
        ];
        for pc in &preconds {
            let got = pcg(&k, &b, pc, 1e-13, 10 * m).map_err(err)?;
            worst = worst.max(dist(&got.x, &want) / norm(&want));
        }
    }
    Ok(worst)
}

/// Wraps a dual subproblem and checks every Jacobian the Newton loop asks for.
struct Audited<'s, 'a> {
    sub: &'s DualSubproblem<'a>,
    g: &'a dyn ProxOperator,
    log: std::cell::RefCell<(usize, Vec<String>)>,
}

fn selection_issue(sel: &JacobianSelection) -> Option<String> {
    for (i, &d) in sel.head.iter().enumerate() {
        if !(0.0..=1.0).contains(&d) {
            return Some(format!("diagonal entry {i} = {d}"));
        }
    }
    for i in 0..sel.blocks.len() {
        let [[a, b], [c, d]] = sel.blocks.block(i);
        if (b - c).abs() > 1e-14 {
            return Some(format!("block {i} not symmetric"));
        }
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d).powi(2) + b * c).sqrt();
        if mean - rad < -1e-14 || mean + rad > 1.0 + 1e-14 {
            return Some(format!("block {i} eigenvalues {} {}", mean - rad, mean + rad));
        }
    }
    None
}

fn dense_issue(m: &DenseMatrix) -> Option<String> {
    let n = m.n_rows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()) {
                return Some(format!("Newton matrix not symmetric at ({i}, {j})"));
            }
        }
    }
    m.cholesky().err().map(|e| format!("Newton matrix not positive definite: {e}"))
}

impl SsnSubproblem for Audited<'_, '_> {
    fn dim(&self) -> usize {
        self.sub.dim()
    }

    fn residual(&self, lambda: &[f64]) -> Vec<f64> {
        self.sub.residual(lambda)
    }

    fn merit(&self, lambda: &[f64]) -> Merit {
        self.sub.merit(lambda)
    }

    fn jacobian<'s>(&'s self, lambda: &[f64]) -> Box<dyn NewtonMatrix + 's> {
        let sel = self.g.jacobian(&self.sub.argument(lambda), self.sub.eta());
        let jac = self.sub.jacobian(lambda);
        let mut log = self.log.borrow_mut();
        log.0 += 1;
        if let Some(issue) = selection_issue(&sel).or_else(|| dense_issue(&jac.to_dense())) {
            log.1.push(issue);
        }
        jac
    }
}

/// Runs Im-PD steps by hand through [`Audited`], and cross-checks each step
/// against [`impd_step`].
fn audited_impd(prob: &Problem, steps: usize, seed: u64) -> Result<(usize, Vec<String>), String> {
    let init = random_initial_point(prob, 0.0, 0.0, seed);
    let mut s = SaddleState::new(prob, init.x, init.lambda).map_err(err)?;
    let mut p: ScalingParams = init.params;
    let cfg = SsnConfig {
        j_max: 100,
        r_max: 200,
        ..SsnConfig::default()
    };
    let mut total = 0;
    let mut issues = Vec::new();
    for k in 0..steps {
        let alpha = 1.0 + 0.1 * k as f64;
        let next = impd_param_update(&p, alpha);
        let z: Vec<f64> = s.conserved(p.beta).iter().zip(prob.b()).map(|(c, b)| next.beta * c - b).collect();
        let sub = DualSubproblem::new(prob.a(), prob.at(), prob.full_prox(), next.beta, alpha / p.gamma, &s.x, &z)
            .map_err(err)?;
        let audited = Audited {
            sub: &sub,
            g: prob.full_prox(),
            log: Default::default(),
        };
        let rep = ssn_solve(&audited, &s.lambda, &cfg).map_err(err)?;
        let reference = impd_step(prob, &s, &p, alpha, &cfg).map_err(err)?;
        if dist(&reference.state.lambda, &rep.lambda) > 1e-12 * (1.0 + norm(&rep.lambda)) {
            issues.push(format!("step {k}: hand-rolled step disagrees with impd_step"));
        }
        let (n, found) = audited.log.into_inner();
        total += n;
        issues.extend(found.into_iter().map(|i| format!("step {k}: {i}")));
        s = SaddleState::new(prob, sub.primal(&rep.lambda), rep.lambda).map_err(err)?;
        p = next;
    }
    Ok((total, issues))
}

fn oracle_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let prox_err = prox_brute_force(&mut rng);
    let moreau_err = moreau_identity(&mut rng);
    let slope = merit_taylor_slope(&mut rng)?;
    let pcg_err = pcg_vs_dense(&mut rng)?;
    let l1l2 = Problem::l1l2(&gen_l1l2(10, 30, 0.2, DEFAULT_SPARSITY, 4).map_err(err)?);
    let rof = Problem::rof(&RofInstance::shapes(8, 8, 20.0, DEFAULT_NOISE, 4).map_err(err)?);
    let (n1, mut issues) = audited_impd(&l1l2, 8, 1)?;
    let (n2, more) = audited_impd(&rof, 8, 2)?;
    issues.extend(more);
    let checks = [
        (prox_err <= 1e-5, format!("prox vs brute force {prox_err:.1e}")),
        (moreau_err <= 1e-12, format!("Moreau identity {moreau_err:.1e}")),
        (slope >= 1.8, format!("merit Taylor remainder slope {slope:.2}")),
        (pcg_err <= 1e-8, format!("pcg vs dense {pcg_err:.1e}")),
        (
            issues.is_empty(),
            format!("{} Newton matrices audited, {} issues{}", n1 + n2, issues.len(), issues.first().map(|i| format!(" ({i})")).unwrap_or_default()),
        ),
    ];
    let ok = checks.iter().all(|c| c.0);
    Ok((ok, checks.iter().map(|(o, s)| format!("{s}{}", mark(*o))).collect::<Vec<_>>().join("; ")))
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> Outcome) -> Criterion {
    let t = Instant::now();
    let outcome = f();
    let c = Criterion {
        id,
        name,
        outcome,
        secs: t.elapsed().as_secs_f64(),
    };
    print_line(&c);
    c
}

fn print_line(c: &Criterion) {
    let (tag, detail) = match &c.outcome {
        Ok((true, d)) => ("PASS", d.clone()),
        Ok((false, d)) => ("FAIL", d.clone()),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    println!("criterion {:>2} {tag}  {} [{:.1}s]: {detail}", c.id, c.name, c.secs);
}

fn main() -> ExitCode {
    // `cargo test` forwards harness flags; only `--list` matters here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let t = Instant::now();
    let sweep = sweep_runs();
    let sweep_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let small = small_problem();
    let rof = rof_runs();
    let rof_s = t.elapsed().as_secs_f64();
    println!("shared runs: l1-l2 sweep {sweep_s:.1}s, small reference + rof im-pd {rof_s:.1}s");

    let results = [
        timed(1, "semi-pdpg iteration and SsN counts", || semi_pdpg_counts(&sweep)),
        timed(2, "ALB iteration counts", alb_counts),
        timed(3, "semi-pdpg rate constant", || rate_constant(&sweep)),
        timed(4, "im-pd Lyapunov contraction", || impd_contraction(&small)),
        timed(5, "semi-pdpg rate envelope", || semi_envelope(&small)),
        timed(6, "conservation of lambda - (Ax - b)/beta", || conservation(&sweep, &small, &rof)),
        timed(7, "im-pd feasibility envelope", || feasibility_envelope(&small)),
        timed(8, "ROF end to end", || rof_end_to_end(&rof)),
        timed(9, "continuous flow", continuous_flow),
        timed(10, "oracle suites", oracle_suites),
    ];
    let failed: Vec<u32> = results.iter().filter(|c| !matches!(c.outcome, Ok((true, _)))).map(|c| c.id).collect();
    println!();
    println!("acceptance: {} passed, {} failed {failed:?}", results.len() - failed.len(), failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
