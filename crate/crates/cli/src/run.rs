use std::time::Instant;

use anyhow::Result;
use pdflow::baselines::{l1l2_warm_start, rof_warm_start, run_aadmm, run_alb, run_apdhg, BaselineOptions, BaselineRun};
use pdflow::pdflow::{random_initial_point, solve, IterRecord, Problem, RunOptions, RunResult, Scheme};
use pdflow::problems::{InstanceKind, InstanceSpec, L1L2Instance, RofInstance};

use crate::config::{validate_spec, Method, SolverConfig};

pub enum Instance {
    L1L2(L1L2Instance),
    Rof(RofInstance),
}

impl Instance {
    pub fn build(spec: &InstanceSpec) -> Result<Self> {
        validate_spec(spec)?;
        Ok(match spec.kind {
            InstanceKind::L1l2 => Instance::L1L2(spec.build_l1l2()?),
            InstanceKind::Rof => Instance::Rof(spec.build_rof()?),
        })
    }

    fn problem(&self) -> Problem {
        match self {
            Instance::L1L2(i) => Problem::l1l2(i),
            Instance::Rof(i) => Problem::rof(i),
        }
    }
}

/// What every solver reports, in the units of the result tables.
pub struct Outcome {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub ssn: Option<usize>,
    pub pcg: usize,
    pub restarts: usize,
    pub final_kkt: f64,
    pub time_s: f64,
    pub warmup_s: f64,
    pub records: Vec<IterRecord>,
    /// `x` for ℓ1-ℓ2, `u` for ROF.
    pub solution: Vec<f64>,
}

impl Outcome {
    fn from_flow(method: Method, run: RunResult, npix: Option<usize>, warmup_s: f64) -> Self {
        let mut solution = run.state.x;
        if let Some(n) = npix {
            solution.truncate(n);
        }
        Self {
            method,
            converged: run.converged,
            iterations: run.iterations,
            ssn: Some(run.ssn_total),
            pcg: run.pcg_total,
            restarts: run.restarts,
            final_kkt: run.records.last().map_or(f64::INFINITY, IterRecord::kkt_max),
            time_s: run.elapsed_s,
            warmup_s,
            records: run.records,
            solution,
        }
    }

    fn from_baseline(method: Method, run: BaselineRun) -> Self {
        Self {
            method,
            converged: run.converged,
            iterations: run.iterations,
            ssn: None,
            pcg: run.pcg_total,
            restarts: 0,
            final_kkt: run.final_kkt(),
            time_s: run.elapsed_s,
            warmup_s: 0.0,
            records: run.records,
            solution: run.primal,
        }
    }
}

pub fn run_solver(inst: &Instance, cfg: &SolverConfig, seed: u64) -> Result<Outcome> {
    let kind = match inst {
        Instance::L1L2(_) => InstanceKind::L1l2,
        Instance::Rof(_) => InstanceKind::Rof,
    };
    cfg.validate(kind)?;
    let base = BaselineOptions {
        kkt_tol: cfg.tol,
        max_iters: cfg.max_iters,
        ..cfg.baseline.clone()
    };
    match (cfg.method, inst) {
        (Method::Alb, Instance::L1L2(i)) => Ok(Outcome::from_baseline(cfg.method, run_alb(i, &base)?)),
        (Method::Apdhg, Instance::Rof(i)) => Ok(Outcome::from_baseline(cfg.method, run_apdhg(i, &base)?)),
        (Method::Aadmm, Instance::Rof(i)) => Ok(Outcome::from_baseline(cfg.method, run_aadmm(i, &base)?)),
        (Method::ImPd | Method::SemiPdpg, _) => run_flow(inst, cfg, seed, &base),
        _ => unreachable!("rejected by validate"),
    }
}

fn run_flow(inst: &Instance, cfg: &SolverConfig, seed: u64, base: &BaselineOptions) -> Result<Outcome> {
    let prob = inst.problem();
    let scheme = if cfg.method == Method::ImPd { Scheme::ImPd } else { Scheme::SemiPdpg };
    let (lip, mu) = match scheme {
        Scheme::SemiPdpg => prob.smooth_constants(),
        Scheme::ImPd => (0.0, 0.0),
    };
    let warm_steps = cfg.warm_start.unwrap_or(match inst {
        Instance::Rof(_) => 50,
        Instance::L1L2(_) => 0,
    });
    let t0 = Instant::now();
    let init = match inst {
        Instance::Rof(i) if warm_steps > 0 => rof_warm_start(i, warm_steps, cfg.beta0, base)?.0,
        Instance::L1L2(i) if warm_steps > 0 => {
            let params = random_initial_point(&prob, mu, lip, seed).params;
            l1l2_warm_start(i, warm_steps, params)?.0
        }
        _ => random_initial_point(&prob, mu, lip, seed),
    };
    let warmup_s = if warm_steps > 0 { t0.elapsed().as_secs_f64() } else { 0.0 };
    let mut opts = RunOptions::new(scheme);
    opts.kkt_tol = cfg.tol;
    opts.max_iters = cfg.max_iters;
    opts.ssn = cfg.ssn.unwrap_or_else(|| prob.default_ssn());
    opts.step_rule = cfg.step_rule;
    opts.seed = seed;
    opts.restart_threshold = cfg.restart_threshold;
    let npix = match inst {
        Instance::Rof(i) => Some(i.npix()),
        Instance::L1L2(_) => None,
    };
    Ok(Outcome::from_flow(cfg.method, solve(&prob, &init, &opts)?, npix, warmup_s))
}
