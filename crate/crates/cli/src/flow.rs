use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use pdflow::flowsim::{linearization_eigs, simulate, ToySystem, Variant};
use pdflow::Error;

use crate::config::{read_json, FlowConfig};
use crate::{create_dir, create_file, Cli};

/// Sample times of the eigenvalue table (all at or above `ln√2`).
const EIG_TIMES: [f64; 6] = [0.5, 1.0, 2.0, 4.0, 6.0, 8.0];

pub fn cmd_flow(cli: &Cli) -> Result<u8> {
    let cfg: FlowConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => FlowConfig::default(),
    };
    cfg.validate()?;
    let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;

    println!("{:>3} {:<9} {:>12} {:>8} {:>10}", "p", "variant", "|z(T)-z*|", "sign(λ)", "substeps");
    for &p in &cfg.p {
        for variant in [Variant::Original, Variant::Modified] {
            let name = match variant {
                Variant::Original => "original",
                Variant::Modified => "modified",
            };
            let sys = ToySystem::new(p, variant)?;
            match simulate(&sys, cfg.z0, cfg.t_end, cfg.h) {
                Ok(traj) => {
                    let mut w = create_file(&dir.join(format!("flow_p{p}_{name}.csv")))?;
                    traj.write_csv(&mut w, cfg.stride)?;
                    w.flush()?;
                    println!(
                        "{p:>3} {name:<9} {:>12.4e} {:>8} {:>10}",
                        traj.terminal_error(),
                        traj.lambda_sign_changes(),
                        traj.substeps
                    );
                }
                Err(Error::BlowUp { time }) => println!("{p:>3} {name:<9} blew up at t = {time:.4}"),
                Err(e) => return Err(e.into()),
            }
        }
    }

    let mut w = create_file(&dir.join("eigenvalues.csv"))?;
    writeln!(w, "variant,t,re1,im1,re2,im2,re3,im3")?;
    for variant in [Variant::Original, Variant::Modified] {
        let name = if variant == Variant::Original { "original" } else { "modified" };
        for t in EIG_TIMES {
            let e = linearization_eigs(variant, t)?;
            writeln!(
                w,
                "{name},{t},{},{},{},{},{},{}",
                e[0].re, e[0].im, e[1].re, e[1].im, e[2].re, e[2].im
            )?;
        }
    }
    w.flush()?;
    println!("wrote {}", dir.display());
    Ok(0)
}
