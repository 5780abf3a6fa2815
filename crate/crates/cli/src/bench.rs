use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::{read_json, BenchConfig, SolverConfig};
use crate::run::{run_solver, Instance, Outcome};
use crate::{config_dir, create_dir, create_file, require_config, Cli};
use pdflow::problems::InstanceSpec;

pub const BENCH_HEADER: &str = "instance,kind,m,n,rho,method,status,its,ssn,pcg,warmup_s,time_s,res_final";

struct Job<'a> {
    idx: usize,
    spec: &'a InstanceSpec,
    inst: &'a Instance,
    solver: &'a SolverConfig,
}

fn row(job: &Job, res: &Result<Outcome>) -> String {
    let s = job.spec;
    let kind = serde_json::to_value(s.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let head = format!("{},{kind},{},{},{},{}", job.idx, s.m, s.n, s.rho, job.solver.method.name());
    match res {
        Ok(o) => format!(
            "{head},{},{},{},{},{:.4},{:.4},{:e}",
            if o.converged { "converged" } else { "max_iters" },
            o.iterations,
            o.ssn.map_or_else(String::new, |v| v.to_string()),
            o.pcg,
            o.warmup_s,
            o.time_s,
            o.final_kkt
        ),
        Err(e) => {
            let msg = format!("{e:#}").replace([',', '\n'], ";");
            format!("{head},failed: {msg},,,,,,")
        }
    }
}

pub fn cmd_bench(cli: &Cli) -> Result<u8> {
    let path = require_config(cli)?;
    let mut cfg: BenchConfig = read_json(path)?;
    for s in &mut cfg.solvers {
        crate::apply_overrides(cli, s);
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let base = config_dir(path);
    let specs = cfg.instances.iter().map(|p| p.load(&base)).collect::<Result<Vec<_>>>()?;
    let insts = specs.iter().map(Instance::build).collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (idx, (spec, inst)) in specs.iter().zip(&insts).enumerate() {
        for solver in &cfg.solvers {
            jobs.push(Job { idx, spec, inst, solver });
        }
    }
    let run = |job: &Job| {
        let res = run_solver(job.inst, job.solver, seed);
        (row(job, &res), res.map(|o| o.converged).ok())
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(String, Option<bool>)> = jobs.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(String, Option<bool>)> = jobs.iter().map(run).collect();

    println!("{BENCH_HEADER}");
    for (line, _) in &results {
        println!("{line}");
    }
    if let Some(dir) = cli.out.clone().or(cfg.out.clone().map(PathBuf::from)) {
        create_dir(&dir)?;
        let mut w = create_file(&dir.join("bench.csv"))?;
        writeln!(w, "{BENCH_HEADER}")?;
        for (line, _) in &results {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    Ok(if results.iter().any(|(_, r)| r.is_none()) {
        1
    } else if results.iter().all(|(_, r)| *r == Some(true)) {
        0
    } else {
        2
    })
}
