//! Deterministic dense linear-algebra kernels.
//!
//! Everything downstream builds on three operations: symmetric
//! eigendecomposition ([`sym_eig`], cyclic Jacobi), singular value
//! decomposition ([`svd`], one-sided Jacobi), and the rank-constrained
//! least-squares solver ([`rrr`]) that the reconstruction solvers call on
//! every iteration.
//!
//! All operations are pure functions on immutable inputs and are safe to
//! call concurrently. Ties in eigen/singular values are broken by input
//! order so repeated runs are bit-identical.

mod eig;
mod matrix;
mod rrr;
mod svd;

pub use eig::{sym_eig, EigResult};
pub use matrix::{dot, Matrix};
pub use rrr::{rrr, rrr_with, RidgePolicy};
pub use svd::{svd, SvdResult};
