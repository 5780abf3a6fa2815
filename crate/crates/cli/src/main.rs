mod bench;
mod config;
mod flow;
mod run;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pdflow::pdflow::write_records_csv;
use pdflow::problems::{pgm_write, InstanceKind, InstanceSpec, Pgm, DEFAULT_NOISE};

use config::{read_json, GenConfig, Method, ProblemSource, RunConfig, SolverConfig};
use run::{run_solver, Instance, Outcome};

/// Primal-dual flow solvers: ℓ1-ℓ2 minimization and TV denoising.
#[derive(Parser)]
#[command(name = "pdflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed (instance seed for `gen`, run seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// KKT tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen,
    /// Run one solver on one instance.
    Solve,
    /// Run every configured solver on every configured instance.
    Bench,
    /// Integrate the original and modified toy flows.
    Flow,
    /// Denoise an image (the synthetic shapes image by default).
    Denoise {
        /// PGM image to denoise instead of the configured one.
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

/// Run finished without meeting the tolerance.
const EXIT_NOT_CONVERGED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Gen => cmd_gen(cli),
        Command::Solve => cmd_solve(cli),
        Command::Bench => bench::cmd_bench(cli),
        Command::Flow => flow::cmd_flow(cli),
        Command::Denoise { image } => cmd_denoise(cli, image.as_deref()),
    }
}

fn require_config(cli: &Cli) -> Result<&Path> {
    match &cli.config {
        Some(p) => Ok(p),
        None => bail!("this command needs --config"),
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn apply_overrides(cli: &Cli, solver: &mut SolverConfig) {
    if let Some(t) = cli.tol {
        solver.tol = t;
    }
    if let Some(k) = cli.max_iters {
        solver.max_iters = k;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_vector_csv(path: &Path, header: &str, v: &[f64]) -> Result<()> {
    let mut w = create_file(path)?;
    writeln!(w, "{header}")?;
    for x in v {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_gen(cli: &Cli) -> Result<u8> {
    let cfg: GenConfig = read_json(require_config(cli)?)?;
    let mut spec = cfg.problem;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let inst = Instance::build(&spec)?;
    let json = spec.to_json()?;
    let Some(dir) = cli.out.clone().or(cfg.out) else {
        println!("{json}");
        return Ok(0);
    };
    create_dir(&dir)?;
    fs::write(dir.join("instance.json"), format!("{json}\n"))?;
    match &inst {
        Instance::L1L2(i) => {
            let mut w = create_file(&dir.join("A.mtx"))?;
            i.a.write_matrix_market(&mut w)?;
            w.flush()?;
            write_vector_csv(&dir.join("b.csv"), "b", &i.b)?;
            if let Some(x) = &i.x_true {
                write_vector_csv(&dir.join("x_true.csv"), "x_true", x)?;
            }
        }
        Instance::Rof(i) => {
            pgm_write(dir.join("noisy.pgm"), &Pgm::from_image(&i.to_image(&i.xi)?))?;
        }
    }
    println!("wrote {}", dir.join("instance.json").display());
    Ok(0)
}

fn print_table_row(spec: &InstanceSpec, out: &Outcome) {
    println!("{:<10} {:>6} {:>6} {:>7} {:>6} {:>10}", "method", "m", "n", "its", "SsN", "time(s)");
    let ssn = out.ssn.map_or_else(|| "-".to_string(), |s| s.to_string());
    println!(
        "{:<10} {:>6} {:>6} {:>7} {:>6} {:>10.2}",
        out.method.name(),
        spec.m,
        spec.n,
        out.iterations,
        ssn,
        out.time_s
    );
    let status = if out.converged { "converged" } else { "stopped at max_iters" };
    println!("{status}: Res = {:.3e}, pcg = {}, restarts = {}", out.final_kkt, out.pcg, out.restarts);
    if out.warmup_s > 0.0 {
        println!("warming-up(s) = {:.2}", out.warmup_s);
    }
}

fn write_run_outputs(dir: &Path, spec: &InstanceSpec, out: &Outcome) -> Result<()> {
    create_dir(dir)?;
    let mut w = create_file(&dir.join("iterations.csv"))?;
    write_records_csv(&out.records, &mut w)?;
    w.flush()?;
    let header = if spec.kind == InstanceKind::Rof { "u" } else { "x" };
    write_vector_csv(&dir.join("solution.csv"), header, &out.solution)?;
    let summary = serde_json::json!({
        "instance": spec,
        "method": out.method,
        "converged": out.converged,
        "its": out.iterations,
        "ssn": out.ssn,
        "pcg": out.pcg,
        "restarts": out.restarts,
        "res": out.final_kkt,
        "time_s": out.time_s,
        "warmup_s": out.warmup_s,
    });
    fs::write(dir.join("summary.json"), format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
    Ok(())
}

fn exit_code(out: &Outcome) -> u8 {
    if out.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn cmd_solve(cli: &Cli) -> Result<u8> {
    let path = require_config(cli)?;
    let mut cfg: RunConfig = read_json(path)?;
    apply_overrides(cli, &mut cfg.solver);
    let seed = cli.seed.unwrap_or(cfg.seed);
    let spec = cfg.problem.load(&config_dir(path))?;
    let inst = Instance::build(&spec)?;
    let out = run_solver(&inst, &cfg.solver, seed)?;
    print_table_row(&spec, &out);
    if let Some(dir) = cli.out.clone().or(cfg.out) {
        write_run_outputs(&dir, &spec, &out)?;
    }
    Ok(exit_code(&out))
}

fn default_denoise_config() -> RunConfig {
    RunConfig {
        problem: ProblemSource::Inline(InstanceSpec {
            kind: InstanceKind::Rof,
            m: 64,
            n: 64,
            rho: 20.0,
            seed: 0,
            sparsity: None,
            noise: Some(DEFAULT_NOISE),
            image: None,
        }),
        solver: SolverConfig::new(Method::ImPd),
        seed: 0,
        out: None,
    }
}

fn cmd_denoise(cli: &Cli, image: Option<&Path>) -> Result<u8> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (read_json::<RunConfig>(p)?, config_dir(p)),
        None => (default_denoise_config(), PathBuf::from(".")),
    };
    apply_overrides(cli, &mut cfg.solver);
    let mut spec = cfg.problem.load(&base)?;
    if spec.kind != InstanceKind::Rof {
        bail!("denoise needs a rof problem");
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
        cfg.seed = s;
    }
    if let Some(img) = image {
        let pgm = pdflow::problems::pgm_read(img).with_context(|| format!("reading {}", img.display()))?;
        spec.m = pgm.height;
        spec.n = pgm.width;
        spec.image = Some(img.to_string_lossy().into_owned());
    }
    let inst = Instance::build(&spec)?;
    let Instance::Rof(rof) = &inst else { unreachable!() };
    let out = run_solver(&inst, &cfg.solver, cfg.seed)?;
    print_table_row(&spec, &out);
    let dir = cli.out.clone().or(cfg.out).unwrap_or_else(|| PathBuf::from("."));
    write_run_outputs(&dir, &spec, &out)?;
    pgm_write(dir.join("noisy.pgm"), &Pgm::from_image(&rof.to_image(&rof.xi)?))?;
    pgm_write(dir.join("denoised.pgm"), &Pgm::from_image(&rof.to_image(&out.solution)?))?;
    println!("wrote {}", dir.join("denoised.pgm").display());
    Ok(exit_code(&out))
}
