//! Preconditioners for the conjugate gradient solver.

use serde::{Deserialize, Serialize};

use super::csr::CsrMatrix;
use crate::error::{check_len, Error, Result};

/// Which preconditioner to build for a Newton system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondKind {
    Identity,
    Jacobi,
    IncompleteCholesky,
}

/// A symmetric positive definite approximation `M` of an operator, applied
/// as `z = M⁻¹ r`.
#[derive(Clone, Debug)]
pub enum Preconditioner {
    Identity,
    Jacobi { inv_diag: Vec<f64> },
    IncompleteCholesky(IcFactor),
}

impl Preconditioner {
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Identity => z.copy_from_slice(r),
            Preconditioner::Jacobi { inv_diag } => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv_diag) {
                    *zi = ri * di;
                }
            }
            Preconditioner::IncompleteCholesky(f) => f.solve_into(r, z),
        }
    }

    pub fn kind(&self) -> PrecondKind {
        match self {
            Preconditioner::Identity => PrecondKind::Identity,
            Preconditioner::Jacobi { .. } => PrecondKind::Jacobi,
            Preconditioner::IncompleteCholesky(_) => PrecondKind::IncompleteCholesky,
        }
    }
}

/// Diagonal (Jacobi) preconditioner from the operator diagonal.
pub fn jacobi_precond(diag: &[f64]) -> Result<Preconditioner> {
    let mut inv_diag = Vec::with_capacity(diag.len());
    for (index, &value) in diag.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
        inv_diag.push(1.0 / value);
    }
    Ok(Preconditioner::Jacobi { inv_diag })
}

/// Zero-fill incomplete Cholesky factor, stored as a lower-triangular CSR
/// matrix whose last entry in each row is the diagonal.
#[derive(Clone, Debug)]
pub struct IcFactor {
    l: CsrMatrix,
    shift: f64,
}

impl IcFactor {
    pub fn lower(&self) -> &CsrMatrix {
        &self.l
    }

    /// Diagonal shift that was needed to avoid breakdown (0 if none).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Solves `L Lᵀ z = r`.
    pub fn solve_into(&self, r: &[f64], z: &mut [f64]) {
        let n = self.l.n_rows();
        let (rp, ci, v) = (self.l.row_ptr(), self.l.col_idx(), self.l.vals());
        for i in 0..n {
            let (lo, hi) = (rp[i], rp[i + 1]);
            let mut s = r[i];
            for k in lo..hi - 1 {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s / v[hi - 1];
        }
        for i in (0..n).rev() {
            let (lo, hi) = (rp[i], rp[i + 1]);
            let zi = z[i] / v[hi - 1];
            z[i] = zi;
            for k in lo..hi - 1 {
                z[ci[k]] -= v[k] * zi;
            }
        }
    }
}

/// IC(0) preconditioner for a sparse SPD matrix. On breakdown the matrix is
/// shifted by `εI`, starting from `ε = 1e-8·max|diag|` and doubling.
pub fn incomplete_cholesky(a: &CsrMatrix) -> Result<Preconditioner> {
    check_len("incomplete_cholesky (square)", a.n_rows(), a.n_cols())?;
    let diag = a.diag();
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::NonPositiveDiagonal { index, value });
    }
    if let Some(l) = ic0(a, 0.0) {
        return Ok(Preconditioner::IncompleteCholesky(IcFactor { l, shift: 0.0 }));
    }
    let max_diag = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let mut eps = 1e-8 * max_diag;
    const MAX_SHIFTS: usize = 80;
    for _ in 0..MAX_SHIFTS {
        if let Some(l) = ic0(a, eps) {
            return Ok(Preconditioner::IncompleteCholesky(IcFactor { l, shift: eps }));
        }
        eps *= 2.0;
    }
    Err(Error::FactorizationBreakdown {
        attempts: MAX_SHIFTS,
    })
}

/// Row-oriented IC(0) of `a + shift·I`; `None` on a non-positive pivot.
fn ic0(a: &CsrMatrix, shift: f64) -> Option<CsrMatrix> {
    let n = a.n_rows();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx: Vec<usize> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    row_ptr.push(0);
    // position of column j inside the row being factored
    let mut pos = vec![usize::MAX; n];
    for i in 0..n {
        let start = col_idx.len();
        let (cols, avals) = a.row(i);
        let mut diag = shift;
        for (&c, &v) in cols.iter().zip(avals) {
            if c < i {
                pos[c] = col_idx.len();
                col_idx.push(c);
                vals.push(v);
            } else if c == i {
                diag += v;
            }
        }
        for p in start..col_idx.len() {
            let k = col_idx[p];
            let (klo, khi) = (row_ptr[k], row_ptr[k + 1]);
            let mut s = vals[p];
            for q in klo..khi - 1 {
                let j = col_idx[q];
                let pj = pos[j];
                if pj != usize::MAX && pj >= start && pj < p {
                    s -= vals[pj] * vals[q];
                }
            }
            vals[p] = s / vals[khi - 1];
        }
        let mut d = diag;
        for p in start..col_idx.len() {
            d -= vals[p] * vals[p];
        }
        for p in start..col_idx.len() {
            pos[col_idx[p]] = usize::MAX;
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        col_idx.push(i);
        vals.push(d.sqrt());
        row_ptr.push(col_idx.len());
    }
    Some(CsrMatrix::from_raw(n, n, row_ptr, col_idx, vals).expect("IC factor is canonical"))
}
