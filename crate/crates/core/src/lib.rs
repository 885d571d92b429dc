//! Robin heat kernels on flat 1D and 2D domains.
//!
//! The crate discretizes the Robin Laplacian `-Δφ = λφ`, `∂φ/∂ν + αφ = 0`
//! with P1 finite elements, solves the generalized eigenproblem
//! `(K + αB) φ = λ M φ` with a dense direct solver, and builds the heat
//! kernel `H(x, y, t) = Σ e^{-λᵢt} φᵢ(x) φᵢ(y)` from the resulting spectrum.
//! Exact interval and rectangle spectra serve as ground truth, and the
//! [`verify`] module turns the analytic properties of the kernel into
//! quantitative checks.
//!
//! Every real Robin parameter is supported, including `α < 0` where the
//! operator is indefinite and the ground state energy is negative.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod kernel;
pub mod mesh;
pub mod oracle;
pub mod spectral;
pub mod verify;

pub use assembly::{RobinForm, SymSparseMatrix};
pub use error::{Error, Result};
pub use kernel::{Field, SpectralKernel, TruncationPolicy};
pub use mesh::Mesh;
pub use spectral::{EigenPair, Spectrum};
