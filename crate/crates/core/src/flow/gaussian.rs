//! Closed Gaussian evolution under the linear-mobility KL flow.
//!
//! The Gaussian family is invariant under ∂_t ρ = ∇·(ρ B ∇ log(ρ/ρ_δ)) when
//! B is constant and ρ_δ is Gaussian. The moments obey
//!
//!   dm/dt = −B Σ_δ⁻¹ (m − m_δ)
//!   dΣ/dt = 2B − B Σ_δ⁻¹ Σ − Σ Σ_δ⁻¹ B
//!
//! which this module integrates with RK4; it doubles as the oracle for the
//! grid scheme.

use nalgebra::{DMatrix, DVector};

use crate::divergences::{kl_gaussian, wasserstein_gaussian};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::GaussianMeasure;

use super::{FlowTrace, Measure};

/// Integrate the moment ODEs to `t_max`, recording KL and W₂ to the target
/// every `record_every` steps.
pub fn gaussian_flow_ode(
    init: &GaussianMeasure,
    mobility: &DMatrix<f64>,
    target: &GaussianMeasure,
    dt: f64,
    t_max: f64,
    record_every: usize,
) -> Result<FlowTrace> {
    if init.dim() != target.dim() || mobility.nrows() != init.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.dim(),
            got: mobility.nrows(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: "time step must be positive".into(),
        });
    }
    // fastest relaxation rate of the linearized system
    let rate = linalg::sym_spectral_norm(&(mobility * target.precision()));
    if dt * rate > 0.1 {
        return Err(Error::StiffnessWarning { product: dt * rate });
    }

    let precision = target.precision().clone();
    let mean_rhs = |m: &DVector<f64>| -> DVector<f64> { -(mobility * &precision * (m - target.mean())) };
    let cov_rhs = |c: &DMatrix<f64>| -> DMatrix<f64> {
        let bp = mobility * &precision;
        2.0 * mobility - &bp * c - c * bp.transpose()
    };

    let mut mean = init.mean().clone();
    let mut cov = init.cov().clone();
    let steps = if t_max <= 0.0 {
        0
    } else {
        (t_max / dt).ceil() as usize
    };

    let mut times = Vec::new();
    let mut kls = Vec::new();
    let mut w2s = Vec::new();
    let mut snapshots = Vec::new();
    let mut record = |t: f64, g: &GaussianMeasure| -> Result<()> {
        times.push(t);
        kls.push(kl_gaussian(g, target)?.max(0.0));
        w2s.push(wasserstein_gaussian(g, target)?);
        snapshots.push(Measure::Gaussian(g.clone()));
        Ok(())
    };

    let current = GaussianMeasure::new(mean.clone(), cov.clone())?;
    record(0.0, &current)?;
    for step in 1..=steps {
        // RK4 on the coupled (mean, cov) system
        let k1m = mean_rhs(&mean);
        let k1c = cov_rhs(&cov);
        let k2m = mean_rhs(&(&mean + 0.5 * dt * &k1m));
        let k2c = cov_rhs(&(&cov + 0.5 * dt * &k1c));
        let k3m = mean_rhs(&(&mean + 0.5 * dt * &k2m));
        let k3c = cov_rhs(&(&cov + 0.5 * dt * &k2c));
        let k4m = mean_rhs(&(&mean + dt * &k3m));
        let k4c = cov_rhs(&(&cov + dt * &k3c));
        mean += (dt / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        cov = linalg::symmetrize(&(&cov + (dt / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)));

        if step % record_every == 0 || step == steps {
            let g = GaussianMeasure::new(mean.clone(), cov.clone())?;
            record(step as f64 * dt, &g)?;
        }
    }

    let decay_fit = super::fit_log_decay(&times, &kls);
    Ok(FlowTrace {
        times,
        kl_to_target: kls,
        w2_to_target: Some(w2s),
        snapshots,
        decay_fit,
        clamped_mass: 0.0,
    })
}
