//! Function-on-scalar regression with reproducing-kernel penalties.
//!
//! The library estimates coefficient functions β_p in a regression of
//! functional responses on scalar covariates,
//!
//! ```text
//! Y_ijl = Σ_p X_ip β_lp(u_ij) + ε_il(u_ij) + δ_ijl,
//! ```
//!
//! where the locations u_ij live on an interval, the unit square, the unit
//! sphere, or the flat torus. Each β_lp is expanded in the Mercer
//! eigenbasis of a positive-definite kernel (Matérn, or a Sobolev-style
//! kernel built from the analytic Laplace–Beltrami spectrum of the domain),
//! and the fit solves a Kronecker-structured ridge problem with one penalty
//! weight per covariate.
//!
//! Modules:
//! - [`kernels`]: domains, distances, Matérn evaluation, Gram matrices.
//! - [`spectra`]: quadrature rules, Nyström eigendecomposition, analytic
//!   Laplacian spectra, eigenvalue-decay diagnostics.
//! - [`solver`]: the penalized least-squares fit and its diagnostics.
//! - [`tuning`]: generalized cross-validation over penalty and kernel grids.
//! - [`simulate`]: synthetic-data harness for convergence-rate studies.

pub mod error;
pub mod kernels;
pub mod simulate;
pub mod solver;
pub mod spectra;
pub mod tuning;

pub use error::{Error, Result};
