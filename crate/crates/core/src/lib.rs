//! Implicit and semi-implicit primal-dual flow solvers for linearly
//! constrained convex problems `min f(x) s.t. Ax = b`, with semi-smooth Newton
//! solves of the dual subproblems.
//!
//! The `parallel` feature (on by default) runs sparse products and vector
//! reductions on rayon. Without it every kernel is sequential; both paths
//! produce bitwise identical results because reductions are chunked the same
//! way.

pub mod baselines;
pub mod error;
pub mod flowsim;
pub mod linalg;
pub mod pdflow;
pub mod prox;
pub mod problems;
pub mod ssn;

pub use error::{Error, Result};
