//! Principal Koopman eigenfunctions of Itô SDEs.
//!
//! For an SDE `dX = G(X) dt + σ(X) dW` with equilibrium `x*`, the drift splits
//! into `A (x - x*) + F(x)`. Given a real left eigenpair `(λ, w)` of `A`, the
//! principal eigenfunction is `φ(x) = wᵀ(x - x*) + h(x)` where the correction
//! `h` solves the second-order generator equation
//!
//! ```text
//! G·∇h + ½ Tr[a ∇²h] − λ h = −wᵀF,      a = σσᵀ
//! ```
//!
//! Two independent routes to `h` are provided:
//!
//! | Route | Module |
//! |-------|--------|
//! | Gaussian RBF collocation, `(L + D − λK + γI) α = −f` | [`collocation`] |
//! | Monte Carlo Feynman–Kac path averages (+ optional kernel ridge fit) | [`feynman_kac`] |
//!
//! [`validation`] carries the verification metrics (semigroup checks,
//! RMSE, boundary stability, conditioning sweeps) and the built-in benchmark
//! experiments.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collocation;
pub mod error;
pub mod feynman_kac;
pub mod kernel;
pub mod quasi;
pub mod registry;
pub mod rng;
pub mod sde_model;
pub mod stats;
pub mod text;
pub mod validation;

pub use collocation::{
    AssembledSystem, CollocationGrid, CollocationSolution, GridSpec, ResidualStats,
};
pub use error::{Error, Result};
pub use feynman_kac::{FkConfig, FkEstimate, KrrFit};
pub use kernel::{GaussianKernel, ProbeKind};
pub use registry::{ModelSetup, ModelSpec};
pub use sde_model::{Domain, EigenPair, EigenSelector, LinearDecomposition, SdeSystem};
pub use validation::ExperimentReport;
