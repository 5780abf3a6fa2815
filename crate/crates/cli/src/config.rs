use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pdflow::baselines::BaselineOptions;
use pdflow::pdflow::StepRule;
use pdflow::problems::{InstanceKind, InstanceSpec};
use pdflow::ssn::SsnConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ImPd,
    SemiPdpg,
    Alb,
    Apdhg,
    Aadmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ImPd => "im-pd",
            Method::SemiPdpg => "semi-pdpg",
            Method::Alb => "alb",
            Method::Apdhg => "apdhg",
            Method::Aadmm => "aadmm",
        }
    }
}

/// Where the problem comes from: inline, or an instance file written by `gen`
/// (`{"instance": "path"}`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged, try_from = "serde_json::Value")]
pub enum ProblemSource {
    File { instance: PathBuf },
    Inline(InstanceSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRef {
    instance: PathBuf,
}

impl TryFrom<serde_json::Value> for ProblemSource {
    type Error = serde_json::Error;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, Self::Error> {
        if v.get("instance").is_some() {
            let r: InstanceRef = serde_json::from_value(v)?;
            Ok(ProblemSource::File { instance: r.instance })
        } else {
            Ok(ProblemSource::Inline(serde_json::from_value(v)?))
        }
    }
}

impl ProblemSource {
    /// Resolves the instance spec; relative paths are taken from `base`.
    pub fn load(&self, base: &Path) -> Result<InstanceSpec> {
        match self {
            ProblemSource::Inline(spec) => Ok(spec.clone()),
            ProblemSource::File { instance } => {
                let path = base.join(instance);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let mut spec = InstanceSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
                if let Some(img) = &spec.image {
                    let dir = path.parent().unwrap_or(Path::new("."));
                    spec.image = Some(dir.join(img).to_string_lossy().into_owned());
                }
                Ok(spec)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Newton settings; the problem's preset when absent.
    #[serde(default)]
    pub ssn: Option<SsnConfig>,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default)]
    pub restart_threshold: Option<f64>,
    /// Warm-start iterations (A-ADMM for ROF, ALB for ℓ1-ℓ2). Defaults to 50
    /// for ROF and 0 for ℓ1-ℓ2.
    #[serde(default)]
    pub warm_start: Option<usize>,
    /// `β₀` after a ROF warm start.
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default)]
    pub baseline: BaselineOptions,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    100_000
}

fn default_beta0() -> f64 {
    1.0
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            tol: default_tol(),
            max_iters: default_max_iters(),
            ssn: None,
            step_rule: StepRule::default(),
            restart_threshold: None,
            warm_start: None,
            beta0: default_beta0(),
            baseline: BaselineOptions::default(),
        }
    }

    pub fn validate(&self, kind: InstanceKind) -> Result<()> {
        if !(self.tol > 0.0) {
            bail!("tol must be positive, got {}", self.tol);
        }
        if self.max_iters == 0 {
            bail!("max_iters must be at least 1");
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            bail!("beta0 must be positive, got {}", self.beta0);
        }
        if let Some(ssn) = &self.ssn {
            ssn.validate()?;
        }
        match (self.method, kind) {
            (Method::Alb, InstanceKind::Rof) => bail!("alb solves l1l2 instances only"),
            (Method::Apdhg | Method::Aadmm, InstanceKind::L1l2) => {
                bail!("{} solves rof instances only", self.method.name())
            }
            (Method::SemiPdpg, InstanceKind::Rof) => bail!("semi-pdpg needs a smooth + nonsmooth split; use im-pd for rof"),
            _ => Ok(()),
        }
    }
}

/// Configuration of `solve` and `denoise`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub solver: SolverConfig,
    /// Seed of the initial point and step sizes.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Configuration of `gen`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub problem: InstanceSpec,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Configuration of `bench`: every solver runs on every instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub instances: Vec<ProblemSource>,
    pub solvers: Vec<SolverConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Configuration of `flow`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub p: Vec<u32>,
    pub h: f64,
    pub t_end: f64,
    /// `(λ, x1, x2)` at `t = 0`.
    pub z0: [f64; 3],
    /// Write every `stride`-th sample.
    pub stride: usize,
    pub out: Option<PathBuf>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            p: vec![6, 8, 10],
            h: 1e-4,
            t_end: 8.0,
            z0: [0.5, 1.0, -1.0],
            stride: 100,
            out: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() {
            bail!("no exponents given");
        }
        if let Some(p) = self.p.iter().find(|&&p| p <= 2 || p % 2 == 1) {
            bail!("p must be even and greater than 2, got {p}");
        }
        if !(self.h > 0.0) || !(self.t_end > 0.0) {
            bail!("h and t_end must be positive");
        }
        if self.stride == 0 {
            bail!("stride must be at least 1");
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Checks the generator parameters of an instance without building it.
pub fn validate_spec(spec: &InstanceSpec) -> Result<()> {
    if !(spec.rho > 0.0) || !spec.rho.is_finite() {
        bail!("rho must be positive, got {}", spec.rho);
    }
    match spec.kind {
        InstanceKind::L1l2 => {
            if spec.m == 0 || spec.m >= spec.n {
                bail!("l1l2 needs 0 < m < n, got m={} n={}", spec.m, spec.n);
            }
            if let Some(s) = spec.sparsity {
                if !(s > 0.0 && s < 1.0) {
                    bail!("sparsity must lie in (0, 1), got {s}");
                }
            }
            if spec.noise.is_some() || spec.image.is_some() {
                bail!("noise and image apply to rof instances only");
            }
        }
        InstanceKind::Rof => {
            if spec.m < 2 || spec.n < 2 {
                bail!("rof images must be at least 2×2");
            }
            if let Some(s) = spec.noise {
                if !(s >= 0.0) || !s.is_finite() {
                    bail!("noise must be nonnegative, got {s}");
                }
            }
            if spec.sparsity.is_some() {
                bail!("sparsity applies to l1l2 instances only");
            }
        }
    }
    Ok(())
}
