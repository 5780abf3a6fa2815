//! Continuous-time primal-dual flows on the two-variable toy problem
//! `min (1/p)(x₁^p + x₂^p)` subject to `x₁ − x₂ = 0`, with `γ(t) = β(t) = e^{−t}`.
//!
//! State layout is `(λ, x₁, x₂)`; the saddle point is the origin.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `λ' = e^t(x₁ − x₂)`.
    Original,
    /// `λ' = e^t(x₁ + x₁' − x₂ − x₂')`.
    Modified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySystem {
    p: u32,
    variant: Variant,
}

impl ToySystem {
    pub fn new(p: u32, variant: Variant) -> Result<Self> {
        if p <= 2 || p % 2 != 0 {
            return Err(Error::InvalidParameter(format!("toy exponent p = {p} must be even and greater than 2")));
        }
        Ok(ToySystem { p, variant })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

pub type State = [f64; 3];

pub fn toy_rhs(sys: &ToySystem, t: f64, z: &State) -> State {
    let [lambda, x1, x2] = *z;
    let et = t.exp();
    let e = sys.p as i32 - 1;
    let dx1 = -et * (x1.powi(e) + lambda);
    let dx2 = -et * (x2.powi(e) - lambda);
    let dl = match sys.variant {
        Variant::Original => et * (x1 - x2),
        Variant::Modified => et * (x1 + dx1 - x2 - dx2),
    };
    [dl, dx1, dx2]
}

/// Solution samples of a generic ODE.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// One classical Runge–Kutta step.
pub fn rk4_step<F>(rhs: &mut F, t: f64, z: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let k1 = rhs(t, z);
    let tmp: Vec<f64> = z.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = rhs(t + 0.5 * h, &tmp);
    let tmp: Vec<f64> = z.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = rhs(t + 0.5 * h, &tmp);
    let tmp: Vec<f64> = z.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = rhs(t + h, &tmp);
    (0..z.len())
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Fixed-step RK4 on `[0, t_end]`; the last step is shortened to land on
/// `t_end`. Aborts with [`Error::BlowUp`] on a non-finite state.
pub fn rk4_integrate<F>(mut rhs: F, z0: &[f64], t_end: f64, h: f64) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("rk4 step {h} and horizon {t_end}")));
    }
    let n = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(z0.to_vec());
    for i in 0..n {
        let t = i as f64 * h;
        let t_next = if i + 1 == n { t_end } else { (i + 1) as f64 * h };
        let z = rk4_step(&mut rhs, t, states.last().unwrap(), t_next - t);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t_next });
        }
        times.push(t_next);
        states.push(z);
    }
    Ok(OdeSolution { times, states })
}

fn toy_rk4(sys: &ToySystem, t: f64, z: &State, h: f64) -> State {
    let add = |z: &State, k: &State, s: f64| [z[0] + s * k[0], z[1] + s * k[1], z[2] + s * k[2]];
    let k1 = toy_rhs(sys, t, z);
    let k2 = toy_rhs(sys, t + 0.5 * h, &add(z, &k1, 0.5 * h));
    let k3 = toy_rhs(sys, t + 0.5 * h, &add(z, &k2, 0.5 * h));
    let k4 = toy_rhs(sys, t + h, &add(z, &k3, h));
    std::array::from_fn(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Largest rotation angle per RK4 substep.
const MAX_ANGLE: f64 = 0.01;
/// Largest `h·|decay rate|` per RK4 substep.
const MAX_DECAY: f64 = 1.0;

/// Number of RK4 substeps used to advance `z` by `h` from `t`.
pub fn substeps(sys: &ToySystem, t: f64, z: &State, h: f64) -> usize {
    let et = t.exp();
    let xm = z[1].abs().max(z[2].abs());
    let curv = (sys.p - 1) as f64 * xm.powi(sys.p as i32 - 2);
    let rot = et * std::f64::consts::SQRT_2;
    let decay = match sys.variant {
        Variant::Original => et * curv,
        Variant::Modified => et * (2.0 * et + (1.0 + et) * curv),
    };
    ((h * rot / MAX_ANGLE).ceil().max((h * decay / MAX_DECAY).ceil()) as usize).max(1)
}

/// `E = (1/p)(x₁^p + x₂^p) + e^{−t}(x₁² + x₂² + λ²)/2`.
pub fn lyapunov_continuous(z: &State, t: f64, p: u32) -> f64 {
    let [l, x1, x2] = *z;
    let pi = p as i32;
    (x1.powi(pi) + x2.powi(pi)) / p as f64 + 0.5 * (-t).exp() * (x1 * x1 + x2 * x2 + l * l)
}

/// `ξ = λ − β(t)⁻¹(x₁ − x₂)`, constant along the modified flow.
pub fn conserved_quantity(z: &State, t: f64) -> f64 {
    z[0] - t.exp() * (z[1] - z[2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub system: ToySystem,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub lyapunov: Vec<f64>,
    pub err_norm: Vec<f64>,
    /// Total RK4 substeps taken.
    pub substeps: usize,
}

pub const TRAJECTORY_HEADER: &str = "t,lambda,x1,x2,lyapunov,err_norm";

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn terminal_error(&self) -> f64 {
        *self.err_norm.last().expect("trajectory holds the initial state")
    }

    /// Sign changes of `λ(t)` across samples, skipping exact zeros.
    pub fn lambda_sign_changes(&self) -> usize {
        let mut prev = 0.0_f64;
        let mut count = 0;
        for s in &self.states {
            let v = s[0];
            if v != 0.0 {
                if prev != 0.0 && v.signum() != prev.signum() {
                    count += 1;
                }
                prev = v;
            }
        }
        count
    }

    /// Largest componentwise gap to `other` at common sample times (matched
    /// by value within `1e-9`).
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        let mut j = 0;
        let mut worst = 0.0_f64;
        for (t, s) in self.times.iter().zip(&self.states) {
            while j < other.times.len() && other.times[j] < t - 1e-9 {
                j += 1;
            }
            if j < other.times.len() && (other.times[j] - t).abs() <= 1e-9 {
                for (a, b) in s.iter().zip(&other.states[j]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    /// Writes every `stride`-th sample (and the last one).
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        let n = self.len();
        for i in (0..n).filter(|i| i % stride == 0 || i + 1 == n) {
            let s = &self.states[i];
            writeln!(w, "{},{},{},{},{},{}", self.times[i], s[0], s[1], s[2], self.lyapunov[i], self.err_norm[i])?;
        }
        Ok(())
    }
}

/// Samples the toy flow every `h` on `[0, t_end]`. Each sample interval is
/// covered by [`substeps`] RK4 steps so the `e^t`-weighted stiffness stays
/// inside the stability region.
pub fn simulate(sys: &ToySystem, z0: State, t_end: f64, h: f64) -> Result<Trajectory> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("flow step {h} and horizon {t_end}")));
    }
    let n = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(z0);
    let mut z = z0;
    let mut total = 0;
    for i in 0..n {
        let t0 = i as f64 * h;
        let t1 = if i + 1 == n { t_end } else { (i + 1) as f64 * h };
        let m = substeps(sys, t0, &z, t1 - t0);
        let dt = (t1 - t0) / m as f64;
        for j in 0..m {
            z = toy_rk4(sys, t0 + j as f64 * dt, &z, dt);
        }
        total += m;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t1 });
        }
        times.push(t1);
        states.push(z);
    }
    let lyapunov = times.iter().zip(&states).map(|(t, s)| lyapunov_continuous(s, *t, sys.p)).collect();
    let err_norm = states.iter().map(|s| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()).collect();
    Ok(Trajectory {
        system: *sys,
        times,
        states,
        lyapunov,
        err_norm,
        substeps: total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    fn real(re: f64) -> Self {
        Eigenvalue { re, im: 0.0 }
    }
}

/// Eigenvalues of the linearization matrix at the saddle (without the
/// common `e^t` factor): `{0, ±i√2}` for the original flow and
/// `{0, −2/(e^t+√(e^{2t}−2)), −e^t−√(e^{2t}−2)}` for the modified one,
/// which requires `t ≥ ln√2`.
pub fn linearization_eigs(variant: Variant, t: f64) -> Result<[Eigenvalue; 3]> {
    match variant {
        Variant::Original => {
            let s = std::f64::consts::SQRT_2;
            Ok([Eigenvalue::real(0.0), Eigenvalue { re: 0.0, im: -s }, Eigenvalue { re: 0.0, im: s }])
        }
        Variant::Modified => {
            let et = t.exp();
            let disc = et * et - 2.0;
            if t < std::f64::consts::SQRT_2.ln() || disc < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "modified eigenvalues need t ≥ ln√2, got t = {t}"
                )));
            }
            let r = disc.sqrt();
            Ok([Eigenvalue::real(0.0), Eigenvalue::real(-2.0 / (et + r)), Eigenvalue::real(-et - r)])
        }
    }
}

/// Linearization matrix without the `e^t` factor, rows `(λ, x₁, x₂)`.
pub fn linearization_matrix(variant: Variant, t: f64) -> [[f64; 3]; 3] {
    let d = match variant {
        Variant::Original => 0.0,
        Variant::Modified => -2.0 * t.exp(),
    };
    [[d, 1.0, -1.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
}
