//! Distances and divergences between measures: exact and entropic optimal
//! transport, the closed Gaussian forms, and f-divergences on grids.

mod transport;

pub use transport::{
    sinkhorn, wasserstein_1d, wasserstein_exact, wasserstein_exact_capped, Quantile1d,
    SinkhornOutcome, DEFAULT_PLAN_CAP,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{GaussianMeasure, GridMeasure, ParticleMeasure};

/// Densities at or below this floor are treated as exactly zero
/// (with the 0·log 0 = 0 convention).
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Named generator of an f-divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FDivergenceKind {
    Kl,
    ChiSquared,
    TotalVariationSquared,
    Custom,
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Convex generator f with f(1) = 0 plus its first two derivatives.
#[derive(Clone)]
pub struct FDivergenceSpec {
    kind: FDivergenceKind,
    f: Arc<ScalarFn>,
    f_prime: Arc<ScalarFn>,
    f_double_prime: Arc<ScalarFn>,
}

impl std::fmt::Debug for FDivergenceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FDivergenceSpec").field("kind", &self.kind).finish()
    }
}

impl FDivergenceSpec {
    /// f(x) = x ln x, the KL generator.
    pub fn kl() -> Self {
        Self {
            kind: FDivergenceKind::Kl,
            f: Arc::new(|x| if x <= 0.0 { 0.0 } else { x * x.ln() }),
            f_prime: Arc::new(|x| x.ln() + 1.0),
            f_double_prime: Arc::new(|x| 1.0 / x),
        }
    }

    /// f(x) = (x − 1)², the χ² generator.
    pub fn chi_squared() -> Self {
        Self {
            kind: FDivergenceKind::ChiSquared,
            f: Arc::new(|x| (x - 1.0) * (x - 1.0)),
            f_prime: Arc::new(|x| 2.0 * (x - 1.0)),
            f_double_prime: Arc::new(|_| 2.0),
        }
    }

    /// f(x) = ¼(x − 1)², a smooth surrogate whose value bounds the squared
    /// total variation distance.
    pub fn total_variation_squared() -> Self {
        Self {
            kind: FDivergenceKind::TotalVariationSquared,
            f: Arc::new(|x| 0.25 * (x - 1.0) * (x - 1.0)),
            f_prime: Arc::new(|x| 0.5 * (x - 1.0)),
            f_double_prime: Arc::new(|_| 0.5),
        }
    }

    /// User-supplied generator; checks f(1) = 0 and samples f'' ≥ 0 on a
    /// probe grid.
    pub fn custom<F, F1, F2>(f: F, f_prime: F1, f_double_prime: F2) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if f(1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "f",
                reason: format!("f(1) = {} must vanish", f(1.0)),
            });
        }
        let probes = [0.05, 0.1, 0.25, 0.5, 0.8, 1.0, 1.5, 2.0, 5.0, 10.0, 20.0];
        for &x in &probes {
            if f_double_prime(x) < -1e-12 {
                return Err(Error::InvalidParameter {
                    name: "f",
                    reason: format!("f''({x}) < 0; generator must be convex"),
                });
            }
        }
        Ok(Self {
            kind: FDivergenceKind::Custom,
            f: Arc::new(f),
            f_prime: Arc::new(f_prime),
            f_double_prime: Arc::new(f_double_prime),
        })
    }

    pub fn kind(&self) -> FDivergenceKind {
        self.kind
    }

    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        (self.f_prime)(x)
    }

    pub fn f_double_prime(&self, x: f64) -> f64 {
        (self.f_double_prime)(x)
    }
}

/// Transport plan between two discrete measures (joint masses) and its cost.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub plan: DMatrix<f64>,
    /// Σ plan_ij · c_ij for the cost that produced the plan.
    pub cost: f64,
}

impl Coupling {
    /// L¹ violations of the (row, column) marginal constraints.
    pub fn marginal_violation(&self, mu: &ParticleMeasure, nu: &ParticleMeasure) -> (f64, f64) {
        let mut row = 0.0;
        for i in 0..self.plan.nrows() {
            row += (self.plan.row(i).sum() - mu.weights()[i]).abs();
        }
        let mut col = 0.0;
        for j in 0..self.plan.ncols() {
            col += (self.plan.column(j).sum() - nu.weights()[j]).abs();
        }
        (row, col)
    }
}

/// Closed-form KL between nondegenerate Gaussians:
/// ½ [tr(Σ₂⁻¹Σ₁) + (m₂−m₁)ᵀΣ₂⁻¹(m₂−m₁) − d + ln det Σ₂ − ln det Σ₁].
pub fn kl_gaussian(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    let d = g1.dim() as f64;
    let p2 = g2.precision();
    let dm = g2.mean() - g1.mean();
    let tr = (p2 * g1.cov()).trace();
    let quad = (p2 * &dm).dot(&dm);
    let log_det = linalg::spd_log_det(g2.cov()) - linalg::spd_log_det(g1.cov());
    Ok(0.5 * (tr + quad - d + log_det))
}

/// Bures form of W₂ between Gaussians:
/// W₂² = |m₁−m₂|² + tr(Σ₁ + Σ₂ − 2(Σ₂^½ Σ₁ Σ₂^½)^½).
pub fn wasserstein_gaussian(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    bures_wasserstein(g1.mean(), g1.cov(), g2.mean(), g2.cov())
}

/// Bures W₂ from raw moments; covariances may be singular (PSD).
pub fn bures_wasserstein(
    m1: &DVector<f64>,
    c1: &DMatrix<f64>,
    m2: &DVector<f64>,
    c2: &DMatrix<f64>,
) -> Result<f64> {
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch {
            expected: m1.len(),
            got: m2.len(),
        });
    }
    let root2 = linalg::psd_sqrt(c2);
    let inner = linalg::psd_sqrt(&(&root2 * c1 * &root2));
    let trace_term = c1.trace() + c2.trace() - 2.0 * inner.trace();
    let sq = (m1 - m2).norm_squared() + trace_term.max(0.0);
    Ok(sq.max(0.0).sqrt())
}

/// D_f(μ‖ν) = ∫ f(dμ/dν) dν by midpoint quadrature over matching grids.
///
/// Cells where ν vanishes but μ does not make the divergence +∞
/// (absolute-continuity failure); cells where both vanish contribute zero.
pub fn f_divergence_grid(
    spec: &FDivergenceSpec,
    mu: &GridMeasure,
    nu: &GridMeasure,
) -> Result<f64> {
    if !mu.same_geometry(nu) {
        return Err(Error::GridMismatch(
            "f-divergence needs identical grids; resample first".into(),
        ));
    }
    let vol = mu.cell_volume();
    let mut total = 0.0;
    for (&m, &n) in mu.density().iter().zip(nu.density()) {
        if n <= DENSITY_FLOOR {
            if m > DENSITY_FLOOR {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        total += spec.f(m / n) * n * vol;
    }
    Ok(total)
}

/// KL(μ‖ν) on matching grids; convenience wrapper used by the flow module.
pub fn kl_grid(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    f_divergence_grid(&FDivergenceSpec::kl(), mu, nu)
}
