//! Sparse linear algebra: CSR storage, vector kernels, preconditioned CG.

pub mod csr;
pub mod dense;
pub mod pcg;
pub mod power;
pub mod precond;
pub mod vector;

pub use csr::CsrMatrix;
pub use dense::{Cholesky, DenseMatrix};
pub use pcg::{pcg, PcgResult};
pub use power::{norm_sq_estimate, norm_sq_estimate_with};
pub use precond::{incomplete_cholesky, jacobi_precond, IcFactor, PrecondKind, Preconditioner};

/// A square linear map applied to vectors without materializing it.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y = op(x)`; `y` is fully overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}
