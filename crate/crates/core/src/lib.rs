//! Tensor-train (TT) toolkit for uncertainty quantification of elliptic PDEs
//! with parametric diffusion coefficients.
//!
//! The crate provides the full pipeline:
//!
//! * dense kernels (QR, truncated SVD, maxvol pivoting, small solves,
//!   symmetric tridiagonal eigenproblems) in [`dense`],
//! * sparse symmetric operators with banded Cholesky / CG solves in [`sparse`],
//! * TT tensors and TT matrices with arithmetic, rounding and binary I/O
//!   in [`tt`],
//! * adaptive cross interpolation of black-box tensors in [`cross`],
//! * a bilinear FEM discretization of `-div(c grad u) = 0` on the unit
//!   square in [`fem`],
//! * truncated Karhunen-Loeve style coefficient models and collocation grids
//!   in [`model`],
//! * the alternating least squares / cross hybrid solver in [`als`],
//! * moments, max-entropy densities and error metrics in [`postproc`],
//! * Monte Carlo and quasi-Monte Carlo reference estimators in [`baselines`].

pub mod als;
pub mod baselines;
pub mod cross;
pub mod dense;
mod error;
pub mod fem;
pub mod model;
pub mod postproc;
pub mod sparse;
pub mod tt;

pub use error::{Error, Result};
pub use tt::{TtMatrix, TtTensor};
