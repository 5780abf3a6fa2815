//! Proximal mappings, generalized Jacobian selections and conjugates for the
//! nonsmooth objectives: the ℓ1 norm, the ℓ1-ℓ2 (elastic net) objective, the
//! isotropic TV norm and the composite ROF objective.
//!
//! Vectors for the TV norm are laid out as `[p; q]`, two halves of equal
//! length holding the two gradient components of every pixel.

use crate::linalg::CsrMatrix;

/// Slack allowed when testing membership in the domain of an indicator.
/// Points produced by projections can overshoot the boundary by rounding.
pub const INDICATOR_TOL: f64 = 1e-10;

/// A closed convex function with a cheap proximal mapping.
pub trait ProxOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// `argmin_y g(y) + ‖y − x‖²/(2θ)`.
    fn prox(&self, x: &[f64], theta: f64) -> Vec<f64>;

    /// Proximal mapping of the conjugate, `prox_{θ g*}(y)`.
    fn prox_conjugate(&self, y: &[f64], theta: f64) -> Vec<f64>;

    /// `g*(y)`; `+∞` outside the domain.
    fn conjugate(&self, y: &[f64]) -> f64;

    /// One element of the Clarke generalized Jacobian of `prox_{θg}` at `x`.
    fn jacobian(&self, x: &[f64], theta: f64) -> JacobianSelection;
}

/// 2×2 blocks coupling entry `i` with entry `i + n` of the `[p; q]` layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TvBlocks {
    pub t11: Vec<f64>,
    pub t12: Vec<f64>,
    pub t21: Vec<f64>,
    pub t22: Vec<f64>,
}

impl TvBlocks {
    pub fn len(&self) -> usize {
        self.t11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t11.is_empty()
    }

    pub fn block(&self, i: usize) -> [[f64; 2]; 2] {
        [[self.t11[i], self.t12[i]], [self.t21[i], self.t22[i]]]
    }
}

/// A symmetric PSD Jacobian selection: a diagonal on the leading `head`
/// coordinates followed by optional TV blocks on the remaining ones.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianSelection {
    pub head: Vec<f64>,
    pub blocks: TvBlocks,
}

impl JacobianSelection {
    pub fn diagonal(d: Vec<f64>) -> Self {
        Self {
            head: d,
            blocks: TvBlocks::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.head.len() + 2 * self.blocks.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let h = self.head.len();
        for i in 0..h {
            y[i] = self.head[i] * x[i];
        }
        let n = self.blocks.len();
        let b = &self.blocks;
        for i in 0..n {
            let (a, c) = (x[h + i], x[h + n + i]);
            y[h + i] = b.t11[i] * a + b.t12[i] * c;
            y[h + n + i] = b.t21[i] * a + b.t22[i] * c;
        }
    }

    /// Diagonal entries of the selection.
    pub fn diag(&self) -> Vec<f64> {
        let mut d = self.head.clone();
        d.extend_from_slice(&self.blocks.t11);
        d.extend_from_slice(&self.blocks.t22);
        d
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let h = self.head.len();
        let n = self.blocks.len();
        let mut t = Vec::with_capacity(h + 4 * n);
        for (i, &v) in self.head.iter().enumerate() {
            t.push((i, i, v));
        }
        let b = &self.blocks;
        for i in 0..n {
            t.push((h + i, h + i, b.t11[i]));
            t.push((h + i, h + n + i, b.t12[i]));
            t.push((h + n + i, h + i, b.t21[i]));
            t.push((h + n + i, h + n + i, b.t22[i]));
        }
        CsrMatrix::from_triplets(self.dim(), self.dim(), &t).expect("indices in range")
    }
}

/// `sgn(x)·max(|x| − η, 0)` componentwise.
pub fn soft_threshold(x: &[f64], eta: f64) -> Vec<f64> {
    x.iter().map(|&v| soft_scalar(v, eta)).collect()
}

#[inline]
fn soft_scalar(v: f64, eta: f64) -> f64 {
    if v > eta {
        v - eta
    } else if v < -eta {
        v + eta
    } else {
        0.0
    }
}

/// Diagonal of the Jacobian selection of soft thresholding: 1 where
/// `|x_i| ≥ η`, else 0.
pub fn l1_jacobian(x: &[f64], eta: f64) -> Vec<f64> {
    x.iter()
        .map(|v| if v.abs() >= eta { 1.0 } else { 0.0 })
        .collect()
}

/// Componentwise clip to `[-1, 1]`.
pub fn box_project(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// `τ_i = 1 − θ / max(θ, √(p_i² + q_i²))`.
pub fn group_shrink_factor(p: &[f64], q: &[f64], theta: f64) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| shrink_scalar(a, b, theta))
        .collect()
}

#[inline]
fn shrink_scalar(a: f64, b: f64, theta: f64) -> f64 {
    let r = a.hypot(b);
    if theta == 0.0 {
        return if r > 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - theta / theta.max(r)
}

/// Prox of the isotropic TV norm: groupwise shrinkage of `(p_i, q_i)`.
pub fn prox_tv(p: &[f64], q: &[f64], theta: f64) -> (Vec<f64>, Vec<f64>) {
    if theta == 0.0 {
        return (p.to_vec(), q.to_vec());
    }
    let tau = group_shrink_factor(p, q, theta);
    (
        p.iter().zip(&tau).map(|(a, t)| a * t).collect(),
        q.iter().zip(&tau).map(|(b, t)| b * t).collect(),
    )
}

/// 2×2 Jacobian blocks of [`prox_tv`]: zero inside the disk of radius θ,
/// `τI + (1−τ)/(p²+q²)·[p q]ᵀ[p q]` outside.
pub fn tv_jacobian(p: &[f64], q: &[f64], theta: f64) -> TvBlocks {
    let n = p.len();
    let mut b = TvBlocks {
        t11: vec![0.0; n],
        t12: vec![0.0; n],
        t21: vec![0.0; n],
        t22: vec![0.0; n],
    };
    for i in 0..n {
        let (a, c) = (p[i], q[i]);
        let r2 = a * a + c * c;
        let r = r2.sqrt();
        if r < theta || r2 == 0.0 {
            continue;
        }
        let tau = 1.0 - theta / r;
        let w = (1.0 - tau) / r2;
        b.t11[i] = tau + w * a * a;
        b.t12[i] = w * a * c;
        b.t21[i] = w * a * c;
        b.t22[i] = tau + w * c * c;
    }
    b
}

/// Projection of `(v_i, w_i)` onto the unit disk, pixel by pixel.
pub fn disk_project(v: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = v.iter().zip(w).map(|(a, b)| 1.0 / a.hypot(*b).max(1.0)).collect();
    (
        v.iter().zip(&scale).map(|(a, s)| a * s).collect(),
        w.iter().zip(&scale).map(|(b, s)| b * s).collect(),
    )
}

/// Prox of the ROF objective `(ρ/2)‖u − ξ‖² + ψ(p)` at `X = (u, p, q)`.
pub fn rof_prox(u: &[f64], p: &[f64], q: &[f64], theta: f64, rho: f64, xi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let den = 1.0 + rho * theta;
    let u_new = u.iter().zip(xi).map(|(a, x)| (a + rho * theta * x) / den).collect();
    let (p_new, q_new) = prox_tv(p, q, theta);
    (u_new, p_new, q_new)
}

/// Conjugate of the ℓ1 norm: indicator of the cube `[-1, 1]ⁿ`.
pub fn l1_conjugate(y: &[f64]) -> f64 {
    if y.iter().all(|v| v.abs() <= 1.0 + INDICATOR_TOL) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Conjugate of the TV norm: indicator of the product of unit disks.
pub fn tv_conjugate(v: &[f64], w: &[f64]) -> f64 {
    if v.iter().zip(w).all(|(a, b)| a.hypot(*b) <= 1.0 + INDICATOR_TOL) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `f*(s, λ) = ‖s‖²/(2ρ) + ⟨s, ξ⟩ + ψ*(λ)` for the ROF objective.
pub fn rof_conjugate(s: &[f64], v: &[f64], w: &[f64], rho: f64, xi: &[f64]) -> f64 {
    let ind = tv_conjugate(v, w);
    if ind.is_infinite() {
        return ind;
    }
    s.iter().zip(xi).map(|(a, x)| a * a / (2.0 * rho) + a * x).sum()
}

/// Prox of the conjugate via the Moreau identity:
/// `prox_{θg*}(y) = y − θ·prox_{g/θ}(y/θ)`.
fn moreau_conjugate<P: ProxOperator + ?Sized>(g: &P, y: &[f64], theta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = y.iter().map(|v| v / theta).collect();
    let p = g.prox(&scaled, 1.0 / theta);
    y.iter().zip(&p).map(|(a, b)| a - theta * b).collect()
}

/// `g(x) = ‖x‖₁`.
#[derive(Clone, Debug)]
pub struct L1Norm {
    pub n: usize,
}

impl ProxOperator for L1Norm {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum()
    }

    fn prox(&self, x: &[f64], theta: f64) -> Vec<f64> {
        soft_threshold(x, theta)
    }

    fn prox_conjugate(&self, y: &[f64], _theta: f64) -> Vec<f64> {
        box_project(y)
    }

    fn conjugate(&self, y: &[f64]) -> f64 {
        l1_conjugate(y)
    }

    fn jacobian(&self, x: &[f64], theta: f64) -> JacobianSelection {
        JacobianSelection::diagonal(l1_jacobian(x, theta))
    }
}

/// `f(x) = (ρ/2)‖x‖² + ‖x‖₁`, the full ℓ1-ℓ2 objective.
#[derive(Clone, Debug)]
pub struct ElasticNet {
    pub n: usize,
    pub rho: f64,
}

impl ProxOperator for ElasticNet {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| 0.5 * self.rho * v * v + v.abs()).sum()
    }

    fn prox(&self, x: &[f64], theta: f64) -> Vec<f64> {
        let den = 1.0 + self.rho * theta;
        x.iter().map(|&v| soft_scalar(v, theta) / den).collect()
    }

    fn prox_conjugate(&self, y: &[f64], theta: f64) -> Vec<f64> {
        moreau_conjugate(self, y, theta)
    }

    fn conjugate(&self, y: &[f64]) -> f64 {
        y.iter()
            .map(|v| {
                let e = (v.abs() - 1.0).max(0.0);
                e * e / (2.0 * self.rho)
            })
            .sum()
    }

    fn jacobian(&self, x: &[f64], theta: f64) -> JacobianSelection {
        let den = 1.0 + self.rho * theta;
        JacobianSelection::diagonal(l1_jacobian(x, theta).into_iter().map(|p| p / den).collect())
    }
}

/// Isotropic TV norm `ψ(p, q) = Σ √(p_i² + q_i²)` on `[p; q]`.
#[derive(Clone, Debug)]
pub struct TvNorm {
    pub npix: usize,
}

impl ProxOperator for TvNorm {
    fn dim(&self) -> usize {
        2 * self.npix
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (p, q) = x.split_at(self.npix);
        p.iter().zip(q).map(|(a, b)| a.hypot(*b)).sum()
    }

    fn prox(&self, x: &[f64], theta: f64) -> Vec<f64> {
        let (p, q) = x.split_at(self.npix);
        let (mut a, b) = prox_tv(p, q, theta);
        a.extend(b);
        a
    }

    fn prox_conjugate(&self, y: &[f64], _theta: f64) -> Vec<f64> {
        let (v, w) = y.split_at(self.npix);
        let (mut a, b) = disk_project(v, w);
        a.extend(b);
        a
    }

    fn conjugate(&self, y: &[f64]) -> f64 {
        let (v, w) = y.split_at(self.npix);
        tv_conjugate(v, w)
    }

    fn jacobian(&self, x: &[f64], theta: f64) -> JacobianSelection {
        let (p, q) = x.split_at(self.npix);
        JacobianSelection {
            head: Vec::new(),
            blocks: tv_jacobian(p, q, theta),
        }
    }
}

/// ROF objective `f(u, p, q) = (ρ/2)‖u − ξ‖² + ψ(p, q)` on `X = [u; p; q]`.
#[derive(Clone, Debug)]
pub struct RofObjective {
    pub rho: f64,
    pub xi: Vec<f64>,
}

impl RofObjective {
    pub fn npix(&self) -> usize {
        self.xi.len()
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let n = self.npix();
        (&x[..n], &x[n..2 * n], &x[2 * n..3 * n])
    }
}

impl ProxOperator for RofObjective {
    fn dim(&self) -> usize {
        3 * self.npix()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (u, p, q) = self.split(x);
        let fid: f64 = u.iter().zip(&self.xi).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * self.rho * fid + p.iter().zip(q).map(|(a, b)| a.hypot(*b)).sum::<f64>()
    }

    fn prox(&self, x: &[f64], theta: f64) -> Vec<f64> {
        let (u, p, q) = self.split(x);
        let (mut a, b, c) = rof_prox(u, p, q, theta, self.rho, &self.xi);
        a.extend(b);
        a.extend(c);
        a
    }

    fn prox_conjugate(&self, y: &[f64], theta: f64) -> Vec<f64> {
        moreau_conjugate(self, y, theta)
    }

    fn conjugate(&self, y: &[f64]) -> f64 {
        let (s, v, w) = self.split(y);
        rof_conjugate(s, v, w, self.rho, &self.xi)
    }

    fn jacobian(&self, x: &[f64], theta: f64) -> JacobianSelection {
        let (_, p, q) = self.split(x);
        JacobianSelection {
            head: vec![1.0 / (1.0 + self.rho * theta); self.npix()],
            blocks: tv_jacobian(p, q, theta),
        }
    }
}
