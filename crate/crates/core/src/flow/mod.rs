//! Wasserstein gradient-flow solvers and their diagnostics.
//!
//! Three integrators cover the three measure carriers: Lagrangian particle
//! transport in parameter space, a conservative finite-volume scheme for the
//! induced data-space Fokker–Planck equation, and the exact Gaussian moment
//! ODEs. Every run produces a [`FlowTrace`] with KL-to-target diagnostics, a
//! fitted decay rate, an exponential-decay certificate against the
//! 2σ_min²λ bound, and an equilibrium classifier separating the conditional
//! and marginal limits on Col(A).

mod gaussian;
mod grid;
mod particle;

pub use gaussian::gaussian_flow_ode;
pub use grid::{cfl_limit, grid_fokker_planck_step, GridFlowStep, CFL_FACTOR};
pub use particle::{
    particle_flow_step, velocities, CurrentDensity, DensityModel, ParticleIntegrator,
};

use nalgebra::{DMatrix, DVector};

use crate::divergences::{
    bures_wasserstein, kl_gaussian, kl_grid, wasserstein_1d, wasserstein_exact,
    wasserstein_gaussian, FDivergenceKind, FDivergenceSpec,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::maps::{affine_image_moments, ForwardMap, LinearForwardMap};
use crate::measures::{GaussianMeasure, GridMeasure, Measure, ParticleMeasure};

/// Integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowScheme {
    ParticleEuler,
    ParticleRk4,
    GridFokkerPlanck,
    GaussianOde,
}

/// Full description of a gradient-flow run.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub divergence: FDivergenceSpec,
    pub map: ForwardMap,
    pub target: Measure,
    pub dt: f64,
    pub t_max: f64,
    pub scheme: FlowScheme,
    /// Kernel bandwidth for particle schemes whose data density is a KDE.
    pub bandwidth: Option<f64>,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn new(
        divergence: FDivergenceSpec,
        map: ForwardMap,
        target: Measure,
        dt: f64,
        t_max: f64,
        scheme: FlowScheme,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: "time step must be positive".into(),
            });
        }
        if t_max != 0.0 && t_max < dt {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: "horizon must be zero or at least one step".into(),
            });
        }
        Ok(Self {
            divergence,
            map,
            target,
            dt,
            t_max,
            scheme,
            bandwidth: None,
            record_every: 1,
        })
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.bandwidth = Some(bandwidth);
        self
    }

    pub fn with_record_every(mut self, record_every: usize) -> Result<Self> {
        if record_every == 0 {
            return Err(Error::InvalidParameter {
                name: "record_every",
                reason: "recording stride must be positive".into(),
            });
        }
        self.record_every = record_every;
        Ok(self)
    }
}

/// Least-squares fit of log KL against time.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Slope of ln KL(t); exponential decay at rate c shows up as −c.
    pub rate: f64,
    pub r2: f64,
}

/// Time series of a flow run plus diagnostics.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub kl_to_target: Vec<f64>,
    pub w2_to_target: Option<Vec<f64>>,
    pub snapshots: Vec<Measure>,
    /// Fitted over the final half of the recorded samples; absent when the
    /// trace is too short or KL hit zero.
    pub decay_fit: Option<DecayFit>,
    /// Total mass removed by the grid scheme's negativity clamp.
    pub clamped_mass: f64,
}

impl FlowTrace {
    /// A grid trace is trustworthy when clamping stayed negligible.
    pub fn is_valid(&self) -> bool {
        self.clamped_mass < 1e-6
    }

    pub fn final_snapshot(&self) -> &Measure {
        self.snapshots.last().expect("trace records at least t = 0")
    }
}

/// Fit ln(kl) ~ a + rate·t over the final half of the samples.
pub(crate) fn fit_log_decay(times: &[f64], kls: &[f64]) -> Option<DecayFit> {
    let n = times.len();
    if n < 3 {
        return None;
    }
    let start = n / 2;
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&kls[start..])
        .filter(|(_, &k)| k > 0.0)
        .map(|(&t, &k)| (t, k.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.0 - tbar)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let rate = sxy / sxx;
    let syy: f64 = pts.iter().map(|p| (p.1 - ybar) * (p.1 - ybar)).sum();
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Some(DecayFit { rate, r2 })
}

/// Mobility matrix implied by the carrier's coordinate system:
/// A Aᵀ in full data coordinates, diag(σ²) in reduced Col(A) coordinates.
fn mobility_for(map: &LinearForwardMap, state_dim: usize) -> Result<DMatrix<f64>> {
    if state_dim == map.nrows() {
        Ok(map.matrix() * map.matrix().transpose())
    } else if state_dim == map.rank() {
        let diag = DVector::from_iterator(
            map.rank(),
            map.singular_values().iter().map(|s| s * s),
        );
        Ok(DMatrix::from_diagonal(&diag))
    } else {
        Err(Error::DimensionMismatch {
            expected: map.nrows(),
            got: state_dim,
        })
    }
}

/// Target density in the state's coordinates: the plain target in full data
/// coordinates, its conditional on Col(A) in reduced coordinates.
fn gaussian_target_in_state_coords(
    map: &LinearForwardMap,
    target: &GaussianMeasure,
    state_dim: usize,
) -> Result<GaussianMeasure> {
    if state_dim == map.nrows() {
        Ok(target.clone())
    } else if state_dim == map.rank() {
        target.conditional_on_subspace(map.column_space_basis())
    } else {
        Err(Error::DimensionMismatch {
            expected: map.nrows(),
            got: state_dim,
        })
    }
}

/// Integrate the configured flow from `init` to `t_max`.
///
/// Grid and Gaussian states may live either in full data coordinates (state
/// dimension = n) or in reduced Col(A) coordinates (state dimension = rank);
/// for overdetermined maps the reduced form is the usable one, with the
/// conditional of the target on Col(A) as the effective reference.
pub fn run_flow(init: &Measure, cfg: &FlowConfig) -> Result<FlowTrace> {
    match (cfg.scheme, init) {
        (FlowScheme::GridFokkerPlanck, Measure::Grid(state)) => run_grid_flow(state, cfg),
        (FlowScheme::GaussianOde, Measure::Gaussian(state)) => run_gaussian_flow(state, cfg),
        (FlowScheme::ParticleEuler, Measure::Particles(state)) => {
            run_particle_flow(state, cfg, ParticleIntegrator::Euler)
        }
        (FlowScheme::ParticleRk4, Measure::Particles(state)) => {
            run_particle_flow(state, cfg, ParticleIntegrator::Rk4)
        }
        _ => Err(Error::InvalidParameter {
            name: "init",
            reason: "initial carrier does not match the scheme".into(),
        }),
    }
}

fn linear_map(cfg: &FlowConfig) -> Result<&LinearForwardMap> {
    match &cfg.map {
        ForwardMap::Linear(a) => Ok(a),
        ForwardMap::Smooth(_) => Err(Error::InvalidParameter {
            name: "map",
            reason: "this scheme requires a linear map".into(),
        }),
    }
}

fn run_grid_flow(state0: &GridMeasure, cfg: &FlowConfig) -> Result<FlowTrace> {
    if cfg.divergence.kind() != FDivergenceKind::Kl {
        return Err(Error::InvalidParameter {
            name: "divergence",
            reason: "the grid scheme integrates the KL flow".into(),
        });
    }
    let map = linear_map(cfg)?;
    let mobility = mobility_for(map, state0.dim())?;
    let target_grid = match &cfg.target {
        Measure::Grid(g) => {
            if !g.same_geometry(state0) {
                return Err(Error::GridMismatch(
                    "target grid must match the state grid".into(),
                ));
            }
            g.clone()
        }
        Measure::Gaussian(g) => {
            let eff = gaussian_target_in_state_coords(map, g, state0.dim())?;
            eff.to_grid(
                state0.lower().to_vec(),
                state0.upper().to_vec(),
                state0.shape().to_vec(),
            )?
        }
        Measure::Particles(_) => {
            return Err(Error::InvalidParameter {
                name: "target",
                reason: "grid flow targets must be grids or Gaussians".into(),
            })
        }
    };
    // CFL guard once up front; the stepper re-checks each step
    let limit = cfl_limit(state0, &mobility);
    if cfg.dt > limit {
        return Err(Error::CflViolation { dt: cfg.dt, limit });
    }

    let steps = if cfg.t_max <= 0.0 {
        0
    } else {
        (cfg.t_max / cfg.dt).ceil() as usize
    };
    let mut state = state0.clone();
    let mut clamped_total = 0.0;
    let mut times = Vec::new();
    let mut kls = Vec::new();
    let mut w2s = if state0.dim() == 1 { Some(Vec::new()) } else { None };
    let mut snapshots = Vec::new();

    let mut record = |t: f64, s: &GridMeasure, w2s: &mut Option<Vec<f64>>| -> Result<()> {
        times.push(t);
        kls.push(kl_grid(s, &target_grid)?.max(0.0));
        if let Some(w) = w2s {
            w.push(wasserstein_1d(&s.into(), &(&target_grid).into(), 2.0)?);
        }
        snapshots.push(Measure::Grid(s.clone()));
        Ok(())
    };
    record(0.0, &state, &mut w2s)?;
    for step in 1..=steps {
        let out = grid_fokker_planck_step(&state, &mobility, &target_grid, cfg.dt)?;
        state = out.state;
        clamped_total += out.clamped_mass;
        if step % cfg.record_every == 0 || step == steps {
            record(step as f64 * cfg.dt, &state, &mut w2s)?;
        }
    }

    let decay_fit = fit_log_decay(&times, &kls);
    Ok(FlowTrace {
        times,
        kl_to_target: kls,
        w2_to_target: w2s,
        snapshots,
        decay_fit,
        clamped_mass: clamped_total,
    })
}

fn run_gaussian_flow(state0: &GaussianMeasure, cfg: &FlowConfig) -> Result<FlowTrace> {
    if cfg.divergence.kind() != FDivergenceKind::Kl {
        return Err(Error::InvalidParameter {
            name: "divergence",
            reason: "the Gaussian ODE integrates the KL flow".into(),
        });
    }
    let map = linear_map(cfg)?;
    let target = match &cfg.target {
        Measure::Gaussian(g) => gaussian_target_in_state_coords(map, g, state0.dim())?,
        _ => {
            return Err(Error::InvalidParameter {
                name: "target",
                reason: "the Gaussian ODE needs a Gaussian target".into(),
            })
        }
    };
    let mobility = mobility_for(map, state0.dim())?;
    gaussian_flow_ode(state0, &mobility, &target, cfg.dt, cfg.t_max, cfg.record_every)
}

fn run_particle_flow(
    state0: &ParticleMeasure,
    cfg: &FlowConfig,
    integrator: ParticleIntegrator,
) -> Result<FlowTrace> {
    if state0.dim() != cfg.map.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.map.input_dim(),
            got: state0.dim(),
        });
    }
    let target_model = match &cfg.target {
        Measure::Gaussian(g) => DensityModel::Gaussian(g.clone()),
        Measure::Grid(g) => DensityModel::Grid(g.clone()),
        Measure::Particles(m) => {
            let h = cfg.bandwidth.ok_or(Error::BandwidthRequired)?;
            DensityModel::Kde {
                cloud: m.clone(),
                bandwidth: vec![h; m.dim()],
            }
        }
    };
    let current = CurrentDensity::Kde {
        bandwidth: cfg.bandwidth,
    };

    let steps = if cfg.t_max <= 0.0 {
        0
    } else {
        (cfg.t_max / cfg.dt).ceil() as usize
    };
    let mut state = state0.clone();
    let mut times = Vec::new();
    let mut kls = Vec::new();
    let mut snapshots = Vec::new();

    let mut record = |t: f64, s: &ParticleMeasure| -> Result<()> {
        times.push(t);
        kls.push(particle_kl_estimate(s, &cfg.map, &target_model, cfg.bandwidth)?);
        snapshots.push(Measure::Particles(s.clone()));
        Ok(())
    };
    record(0.0, &state)?;
    for step in 1..=steps {
        state = particle_flow_step(
            &state,
            &cfg.map,
            &cfg.divergence,
            &target_model,
            &current,
            cfg.dt,
            integrator,
        )?;
        if step % cfg.record_every == 0 || step == steps {
            record(step as f64 * cfg.dt, &state)?;
        }
    }

    let decay_fit = fit_log_decay(&times, &kls);
    Ok(FlowTrace {
        times,
        kl_to_target: kls,
        w2_to_target: None,
        snapshots,
        decay_fit,
        clamped_mass: 0.0,
    })
}

/// Plug-in estimate of KL(ρ_y ‖ ρ_y^δ) from the pushed cloud: a kernel
/// estimate of ρ_y against the target density, clamped at zero (the
/// estimator is noisy and may dip negative near equilibrium).
fn particle_kl_estimate(
    state: &ParticleMeasure,
    map: &ForwardMap,
    target: &DensityModel,
    bandwidth: Option<f64>,
) -> Result<f64> {
    let pushed = map.pushforward(state)?;
    let bw = match bandwidth {
        Some(h) => vec![h; pushed.dim()],
        None => pushed
            .silverman_bandwidths()
            .map_err(|_| Error::BandwidthRequired)?,
    };
    let mut kl = 0.0;
    for i in 0..pushed.len() {
        let y = pushed.point(i);
        let w = pushed.weights()[i];
        if w <= 0.0 {
            continue;
        }
        let p = pushed.kde_density_axes(&y, &bw)?;
        let q = target.density(&y)?;
        if q <= crate::divergences::DENSITY_FLOOR {
            return Ok(f64::INFINITY);
        }
        kl += w * (p.max(crate::divergences::DENSITY_FLOOR) / q).ln();
    }
    Ok(kl.max(0.0))
}

/// Exponential-decay certificate for KL(t) ≤ exp(−2σ_min²λ t)·KL(0)·(1+slack).
#[derive(Debug, Clone, Copy)]
pub struct DecayCertificate {
    pub rate_bound: f64,
    pub satisfied: bool,
    /// Largest ratio KL(t) / (exp(−rate·t)·KL(0)) over recorded times.
    pub worst_ratio: f64,
}

/// Checks every recorded time against the log-Sobolev decay envelope with
/// rate 2σ_min²λ.
pub fn certify_decay_bound(
    trace: &FlowTrace,
    sigma_min: f64,
    lambda: f64,
    slack: f64,
) -> DecayCertificate {
    let rate_bound = 2.0 * sigma_min * sigma_min * lambda;
    let kl0 = trace.kl_to_target.first().copied().unwrap_or(0.0);
    let mut worst: f64 = 0.0;
    for (t, kl) in trace.times.iter().zip(&trace.kl_to_target) {
        let envelope = (-rate_bound * t).exp() * kl0;
        if envelope > 0.0 {
            worst = worst.max(kl / envelope);
        } else if *kl > 0.0 {
            worst = f64::INFINITY;
        }
    }
    DecayCertificate {
        rate_bound,
        satisfied: worst <= 1.0 + slack,
        worst_ratio: worst,
    }
}

/// Flatness of the equilibrium ratio ρ/ρ_δ over the effective support
/// (cells with ρ above `support_floor` times its maximum): the coefficient
/// of variation of the ratio.
pub fn equilibrium_ratio_cv(
    state: &GridMeasure,
    target: &GridMeasure,
    support_floor: f64,
) -> Result<f64> {
    if !state.same_geometry(target) {
        return Err(Error::GridMismatch("state and target grids differ".into()));
    }
    let max_rho = state.density().iter().fold(0.0f64, |a, &b| a.max(b));
    let mut ratios = Vec::new();
    for (&r, &t) in state.density().iter().zip(target.density()) {
        if r > support_floor * max_rho && t > crate::divergences::DENSITY_FLOOR {
            ratios.push(r / t);
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidParameter {
            name: "support_floor",
            reason: "no cells above the support floor".into(),
        });
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Which reference distribution a converged flow reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumLabel {
    Conditional,
    Marginal,
    Neither,
}

/// Classifier output: W₂ distances from the final state (in Col(A)
/// coordinates) to the conditional and marginal references.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumClassification {
    pub label: EquilibriumLabel,
    pub dist_conditional: f64,
    pub dist_marginal: f64,
}

/// Coordinate system of a flow snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSpace {
    /// Parameter space: snapshots map to Col(A) coordinates via ΣVᵀ.
    Parameter,
    /// Full data space: snapshots map to Col(A) coordinates via Uᵀ.
    Data,
    /// Already in Col(A) coordinates.
    Reduced,
}

/// Compares the final snapshot against the conditional and marginal of the
/// target on Col(A) and returns the nearer label when it wins by at least a
/// factor of two.
pub fn classify_equilibrium(
    trace: &FlowTrace,
    map: &LinearForwardMap,
    target: &GaussianMeasure,
    space: FlowSpace,
) -> Result<EquilibriumClassification> {
    let basis = map.column_space_basis();
    let conditional = target.conditional_on_subspace(basis)?;
    let marginal = target.marginal_on_subspace(basis)?;
    let final_state = trace.final_snapshot();

    let to_reduced: Option<DMatrix<f64>> = match space {
        FlowSpace::Reduced => None,
        FlowSpace::Data => Some(basis.transpose()),
        FlowSpace::Parameter => {
            // z = Uᵀ A u = Σ Vᵀ u
            let sig = DMatrix::from_diagonal(&DVector::from_row_slice(map.singular_values()));
            Some(sig * map.row_space_basis().transpose())
        }
    };

    let dist = |oracle: &GaussianMeasure| -> Result<f64> {
        measure_to_gaussian_w2(final_state, to_reduced.as_ref(), oracle)
    };
    let dist_conditional = dist(&conditional)?;
    let dist_marginal = dist(&marginal)?;

    let label = if dist_conditional < 0.5 * dist_marginal {
        EquilibriumLabel::Conditional
    } else if dist_marginal < 0.5 * dist_conditional {
        EquilibriumLabel::Marginal
    } else {
        EquilibriumLabel::Neither
    };
    Ok(EquilibriumClassification {
        label,
        dist_conditional,
        dist_marginal,
    })
}

/// W₂ between a snapshot (optionally mapped into reduced coordinates) and a
/// Gaussian reference. One-dimensional cases are exact via quantile
/// coupling; higher dimensions use the Bures distance of a moment fit.
fn measure_to_gaussian_w2(
    state: &Measure,
    transform: Option<&DMatrix<f64>>,
    oracle: &GaussianMeasure,
) -> Result<f64> {
    match state {
        Measure::Gaussian(g) => {
            let (mean, cov) = match transform {
                Some(t) => affine_image_moments(t, &DVector::zeros(t.nrows()), g)?,
                None => (g.mean().clone(), g.cov().clone()),
            };
            bures_wasserstein(&mean, &cov, oracle.mean(), oracle.cov())
        }
        Measure::Particles(m) => {
            let mapped = match transform {
                Some(t) => {
                    let pts = m.points() * t.transpose();
                    ParticleMeasure::new(pts, m.weights().clone())?
                }
                None => m.clone(),
            };
            if oracle.dim() == 1 && mapped.dim() == 1 {
                let sd = oracle.cov()[(0, 0)].sqrt();
                let lo = oracle.mean()[0] - 8.0 * sd;
                let hi = oracle.mean()[0] + 8.0 * sd;
                let grid = oracle.to_grid(vec![lo], vec![hi], vec![4096])?;
                wasserstein_1d(&(&mapped).into(), &(&grid).into(), 2.0)
            } else {
                // moment fit
                let mean = mapped.mean();
                let mut cov = DMatrix::zeros(mapped.dim(), mapped.dim());
                for i in 0..mapped.len() {
                    let d = mapped.point(i) - &mean;
                    cov += mapped.weights()[i] * &d * d.transpose();
                }
                bures_wasserstein(&mean, &cov, oracle.mean(), oracle.cov())
            }
        }
        Measure::Grid(g) => {
            if transform.is_some() {
                return Err(Error::InvalidParameter {
                    name: "space",
                    reason: "grid snapshots must already be in reduced coordinates".into(),
                });
            }
            if g.dim() == 1 {
                let oracle_grid = oracle.to_grid(
                    g.lower().to_vec(),
                    g.upper().to_vec(),
                    g.shape().to_vec(),
                )?;
                wasserstein_1d(&g.into(), &(&oracle_grid).into(), 2.0)
            } else {
                let vol = g.cell_volume();
                let d = g.dim();
                let mut mean = DVector::zeros(d);
                for i in 0..g.n_cells() {
                    let c = DVector::from_row_slice(&g.cell_center(i));
                    mean += g.density()[i] * vol * c;
                }
                let mut cov = DMatrix::zeros(d, d);
                for i in 0..g.n_cells() {
                    let c = DVector::from_row_slice(&g.cell_center(i)) - &mean;
                    cov += g.density()[i] * vol * &c * c.transpose();
                }
                bures_wasserstein(&mean, &cov, oracle.mean(), oracle.cov())
            }
        }
    }
}

/// Equilibrium of the W₂-objective flow: the pushforward of the target
/// through A†. The W₂ gradient flow of W₂²(A#ρ_u, ρ_y^δ) settles on the
/// measure whose pushforward is the marginal of ρ_y^δ on Col(A), and this
/// map realizes it directly.
pub fn w2_equilibrium_measure(map: &LinearForwardMap, target: &Measure) -> Result<Measure> {
    match target {
        Measure::Particles(m) => {
            let pts = m.points() * map.pseudo_inverse().transpose();
            Ok(ParticleMeasure::new(pts, m.weights().clone())?.into())
        }
        Measure::Gaussian(g) => {
            let (mean, cov) = affine_image_moments(
                map.pseudo_inverse(),
                &DVector::zeros(map.ncols()),
                g,
            )?;
            Ok(GaussianMeasure::new(mean, cov)?.into())
        }
        Measure::Grid(_) => Err(Error::InvalidParameter {
            name: "target",
            reason: "W₂ equilibrium accepts particle or Gaussian targets".into(),
        }),
    }
}

/// Relaxation toward the W₂-objective equilibrium along Wasserstein
/// geodesics, recording KL and W₂ to the equilibrium in parameter space.
///
/// The classifier only consumes the limit; the path is an exponential
/// relaxation, not a discretized W₂ gradient flow.
pub fn run_w2_relaxation(
    init: &GaussianMeasure,
    map: &LinearForwardMap,
    target: &GaussianMeasure,
    dt: f64,
    t_max: f64,
    record_every: usize,
) -> Result<FlowTrace> {
    if !(dt > 0.0) || record_every == 0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: "need dt > 0 and a positive recording stride".into(),
        });
    }
    let equilibrium = match w2_equilibrium_measure(map, &target.clone().into())? {
        Measure::Gaussian(g) => g,
        _ => unreachable!("gaussian target yields gaussian equilibrium"),
    };
    if init.dim() != equilibrium.dim() {
        return Err(Error::DimensionMismatch {
            expected: equilibrium.dim(),
            got: init.dim(),
        });
    }

    let steps = if t_max <= 0.0 {
        0
    } else {
        (t_max / dt).ceil() as usize
    };
    let tau = 1.0 - (-dt).exp();
    let mut current = init.clone();
    let mut times = Vec::new();
    let mut kls = Vec::new();
    let mut w2s = Vec::new();
    let mut snapshots = Vec::new();
    let mut record = |t: f64, g: &GaussianMeasure| -> Result<()> {
        times.push(t);
        kls.push(kl_gaussian(g, &equilibrium)?.max(0.0));
        w2s.push(wasserstein_gaussian(g, &equilibrium)?);
        snapshots.push(Measure::Gaussian(g.clone()));
        Ok(())
    };
    record(0.0, &current)?;
    for step in 1..=steps {
        current = bures_geodesic_step(&current, &equilibrium, tau)?;
        if step % record_every == 0 || step == steps {
            record(step as f64 * dt, &current)?;
        }
    }
    let decay_fit = fit_log_decay(&times, &kls);
    Ok(FlowTrace {
        times,
        kl_to_target: kls,
        w2_to_target: Some(w2s),
        snapshots,
        decay_fit,
        clamped_mass: 0.0,
    })
}

/// Move fraction τ along the W₂ geodesic from one Gaussian to another:
/// means interpolate linearly, covariances through the optimal map
/// T = Σ⁻½ (Σ½ Σ_e Σ½)½ Σ⁻½.
fn bures_geodesic_step(
    from: &GaussianMeasure,
    to: &GaussianMeasure,
    tau: f64,
) -> Result<GaussianMeasure> {
    let mean = from.mean() * (1.0 - tau) + to.mean() * tau;
    let root = linalg::psd_sqrt(from.cov());
    let root_inv = linalg::spd_inverse(&root);
    let inner = linalg::psd_sqrt(&(&root * to.cov() * &root));
    let t_map = &root_inv * inner * &root_inv;
    let d = from.dim();
    let blend = DMatrix::identity(d, d) * (1.0 - tau) + tau * t_map;
    let cov = linalg::symmetrize(&(&blend * from.cov() * blend.transpose()));
    GaussianMeasure::new(mean, cov)
}

/// Exact-transport relaxation of a particle cloud toward the W₂ equilibrium
/// cloud A†#target; atoms move along barycentric transport rays.
pub fn relax_particles_to_w2_equilibrium(
    init: &ParticleMeasure,
    map: &LinearForwardMap,
    target: &ParticleMeasure,
    steps: usize,
    tau: f64,
) -> Result<ParticleMeasure> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: "relaxation fraction must lie in [0, 1]".into(),
        });
    }
    let equilibrium = match w2_equilibrium_measure(map, &target.clone().into())? {
        Measure::Particles(m) => m,
        _ => unreachable!(),
    };
    let mut state = init.clone();
    for _ in 0..steps {
        let (_, coupling) = wasserstein_exact(&state, &equilibrium, 2.0)?;
        let mut next = state.points().clone();
        for i in 0..state.len() {
            let wi = state.weights()[i];
            if wi <= 0.0 {
                continue;
            }
            let mut bary = DVector::zeros(state.dim());
            for j in 0..equilibrium.len() {
                let pij = coupling.plan[(i, j)];
                if pij > 0.0 {
                    bary += pij / wi * equilibrium.point(j);
                }
            }
            let u = state.point(i);
            let moved = &u + tau * (bary - &u);
            next.row_mut(i).copy_from(&moved.transpose());
        }
        state = ParticleMeasure::new(next, state.weights().clone())?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn correlated_target() -> GaussianMeasure {
        GaussianMeasure::new(
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap()
    }

    fn tall_map() -> LinearForwardMap {
        LinearForwardMap::from_rows(&[&[1.0], &[0.0]]).unwrap()
    }

    #[test]
    fn zero_horizon_trace() {
        let target = GaussianMeasure::scalar(0.0, 1.0).unwrap();
        let init = target.to_grid(vec![-8.0], vec![8.0], vec![128]).unwrap();
        let cfg = FlowConfig::new(
            FDivergenceSpec::kl(),
            ForwardMap::Linear(LinearForwardMap::identity(1)),
            target.into(),
            1e-4,
            0.0,
            FlowScheme::GridFokkerPlanck,
        )
        .unwrap();
        let trace = run_flow(&init.into(), &cfg).unwrap();
        assert_eq!(trace.snapshots.len(), 1);
        assert!(trace.decay_fit.is_none());
    }

    #[test]
    fn grid_flow_kl_decay_rate_two() {
        let target = GaussianMeasure::scalar(0.0, 1.0).unwrap();
        let init = GaussianMeasure::scalar(2.0, 1.0)
            .unwrap()
            .to_grid(vec![-8.0], vec![8.0], vec![256])
            .unwrap();
        let dt = 0.9 * cfl_limit(&init, &DMatrix::identity(1, 1));
        let cfg = FlowConfig::new(
            FDivergenceSpec::kl(),
            ForwardMap::Linear(LinearForwardMap::identity(1)),
            target.into(),
            dt,
            1.0,
            FlowScheme::GridFokkerPlanck,
        )
        .unwrap()
        .with_record_every(50)
        .unwrap();
        let trace = run_flow(&init.into(), &cfg).unwrap();
        assert!(trace.is_valid());
        let fit = trace.decay_fit.unwrap();
        assert!((fit.rate + 2.0).abs() < 0.2, "rate {}", fit.rate);
        // energy dissipation along the trace
        for w in trace.kl_to_target.windows(2) {
            assert!(w[1] <= w[0] + 1e-3);
        }
        let cert = certify_decay_bound(&trace, 1.0, 1.0, 0.05);
        assert!(cert.satisfied, "worst ratio {}", cert.worst_ratio);
    }

    #[test]
    fn reduced_flow_equivalence_under_permutation() {
        // A = diag(1, 2) has axis-swapping singular vectors: the reduced
        // z-coordinates are the permuted y-coordinates, and the two runs
        // must agree exactly in KL at matched times.
        let a = LinearForwardMap::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let target = GaussianMeasure::new(
            DVector::from_row_slice(&[0.3, -0.2]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.8]),
        )
        .unwrap();
        let init_y = GaussianMeasure::new(
            DVector::from_row_slice(&[1.0, 0.5]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        // y-space run
        let by = a.matrix() * a.matrix().transpose();
        let trace_y = gaussian_flow_ode(&init_y, &by, &target, 1e-3, 0.5, 100).unwrap();
        // z-space run: permute coordinates by Uᵀ
        let u_basis = a.column_space_basis();
        let init_z = GaussianMeasure::new(
            u_basis.transpose() * init_y.mean(),
            u_basis.transpose() * init_y.cov() * u_basis,
        )
        .unwrap();
        let target_z = GaussianMeasure::new(
            u_basis.transpose() * target.mean(),
            u_basis.transpose() * target.cov() * u_basis,
        )
        .unwrap();
        let sig2 = DMatrix::from_diagonal(&DVector::from_iterator(
            2,
            a.singular_values().iter().map(|s| s * s),
        ));
        let trace_z = gaussian_flow_ode(&init_z, &sig2, &target_z, 1e-3, 0.5, 100).unwrap();
        for (ky, kz) in trace_y.kl_to_target.iter().zip(&trace_z.kl_to_target) {
            assert_relative_eq!(ky, kz, epsilon = 1e-9);
        }
    }

    #[test]
    fn conditional_limit_for_overdetermined_kl_flow() {
        // correlated target, A = [1; 0]: reduced grid flow converges to the
        // conditional N(0, 0.75) on Col(A)
        let a = tall_map();
        let target = correlated_target();
        let init = GaussianMeasure::scalar(2.0, 1.0)
            .unwrap()
            .to_grid(vec![-8.0], vec![8.0], vec![256])
            .unwrap();
        let dt = 0.9 * cfl_limit(&init, &DMatrix::identity(1, 1));
        let cfg = FlowConfig::new(
            FDivergenceSpec::kl(),
            ForwardMap::Linear(a.clone()),
            target.clone().into(),
            dt,
            4.0,
            FlowScheme::GridFokkerPlanck,
        )
        .unwrap()
        .with_record_every(200)
        .unwrap();
        let trace = run_flow(&init.into(), &cfg).unwrap();
        let class = classify_equilibrium(&trace, &a, &target, FlowSpace::Reduced).unwrap();
        assert_eq!(class.label, EquilibriumLabel::Conditional);
        assert!(class.dist_conditional < 0.05, "distance {}", class.dist_conditional);
        assert!(class.dist_marginal > 2.0 * class.dist_conditional);
    }

    #[test]
    fn marginal_limit_for_w2_objective() {
        let a = tall_map();
        let target = correlated_target();
        let init = GaussianMeasure::scalar(-1.0, 0.5).unwrap();
        let trace = run_w2_relaxation(&init, &a, &target, 0.05, 10.0, 10).unwrap();
        let class = classify_equilibrium(&trace, &a, &target, FlowSpace::Parameter).unwrap();
        assert_eq!(class.label, EquilibriumLabel::Marginal);
        assert!(class.dist_marginal < 0.05, "distance {}", class.dist_marginal);
        assert!(class.dist_conditional > 2.0 * class.dist_marginal);
    }

    #[test]
    fn classifier_tie_for_uncorrelated_target() {
        // block-diagonal covariance and zero off-subspace mean: conditional
        // and marginal coincide, classifier must refuse to pick a side
        let a = tall_map();
        let target = GaussianMeasure::new(
            DVector::from_row_slice(&[0.5, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.7]),
        )
        .unwrap();
        let init = GaussianMeasure::scalar(0.0, 1.0).unwrap();
        let trace = run_w2_relaxation(&init, &a, &target, 0.05, 8.0, 20).unwrap();
        let class = classify_equilibrium(&trace, &a, &target, FlowSpace::Parameter).unwrap();
        assert_eq!(class.label, EquilibriumLabel::Neither);
        assert!((class.dist_conditional - class.dist_marginal).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_ratio_flatness() {
        let target = GaussianMeasure::scalar(0.0, 1.0).unwrap();
        let grid = target.to_grid(vec![-8.0], vec![8.0], vec![256]).unwrap();
        let cv = equilibrium_ratio_cv(&grid, &grid, 1e-4).unwrap();
        assert!(cv < 1e-12);
    }

    #[test]
    fn particle_relaxation_reaches_equilibrium() {
        let a = tall_map();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let target_cloud = correlated_target().sample(64, &mut rng).unwrap();
        let init = GaussianMeasure::scalar(-2.0, 1.0)
            .unwrap()
            .sample(64, &mut rng)
            .unwrap();
        let relaxed = relax_particles_to_w2_equilibrium(&init, &a, &target_cloud, 70, 0.3).unwrap();
        let eq = match w2_equilibrium_measure(&a, &target_cloud.into()).unwrap() {
            Measure::Particles(m) => m,
            _ => unreachable!(),
        };
        let (d, _) = wasserstein_exact(&relaxed, &eq, 2.0).unwrap();
        assert!(d < 1e-6, "distance to equilibrium {d}");
    }
}
