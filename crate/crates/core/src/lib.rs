// Guards written as `!(x > 0.0)` intentionally reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Stochastic inverse problems over probability measures.
//!
//! Given a known forward map G and an observed data distribution ρ_y, the
//! crate recovers parameter distributions ρ_u with G#ρ_u ≈ ρ_y through three
//! routes, mirroring the classical deterministic pipeline:
//!
//! - **direct inversion** ([`inversion`]): pull the data back through G⁻¹
//!   (or the pseudoinverse selector for underdetermined linear maps), with
//!   stability reports contrasting Wasserstein and f-divergence metrics;
//! - **regularized variational solvers** ([`variational`]): the
//!   entropy-entropy pairing with its closed-form optimum and error identity,
//!   and the W₂-W₂ pairing equivalent to a measure-level Tikhonov operator;
//! - **Wasserstein gradient flows** ([`flow`]): particle, grid
//!   finite-volume, and Gaussian-ODE integrators with exponential-decay
//!   certificates and equilibrium classification (conditional vs marginal).
//!
//! Measures come in three carriers ([`measures`]): particle clouds, grid
//! densities, and Gaussians; Gaussians carry every closed-form oracle.

pub mod divergences;
pub mod error;
pub mod flow;
pub mod inversion;
pub mod linalg;
pub mod maps;
pub mod measures;
pub mod variational;

pub use error::{Error, Result};
pub use maps::{ForwardMap, LinearForwardMap, SmoothForwardMap};
pub use measures::{GaussianMeasure, GridMeasure, LogConcavityCertificate, Measure, ParticleMeasure};

/// Crate version, surfaced in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
