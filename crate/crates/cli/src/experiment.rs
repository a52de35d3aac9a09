//! Experiment runner: resolves a config, drives the core solvers, writes
//! artifacts atomically, and returns a manifest with per-check verdicts.
//!
//! Configuration problems abort with a config error; numerical failures
//! during a run are recorded in the manifest as failed verdicts so batch
//! studies keep going.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use distinv_core::divergences::{
    f_divergence_grid, kl_gaussian, sinkhorn, wasserstein_1d, wasserstein_exact,
    wasserstein_gaussian, FDivergenceSpec,
};
use distinv_core::flow::{
    certify_decay_bound, classify_equilibrium, run_flow, run_w2_relaxation, EquilibriumLabel,
    FlowConfig, FlowScheme, FlowSpace,
};
use distinv_core::inversion::{
    direct_invert, stability_sweep, InvertOptions, PerturbationFamily, SweepMetric,
};
use distinv_core::maps::{pushforward_gaussian, ForwardMap, LinearForwardMap};
use distinv_core::measures::{GaussianMeasure, Measure};
use distinv_core::variational::{balance_alpha, solve_w2_tikhonov, tikhonov_error_bound};

use crate::config::{
    DivergenceName, ExperimentConfig, ExperimentKind, MetricName, PerturbationFamilyName,
    SchemeName, SpaceName,
};
use crate::error::{CliError, CliResult};
use crate::io;

/// One pass/fail record in a run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub criterion: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn pass(criterion: &str, value: f64) -> Self {
        Self {
            criterion: criterion.into(),
            pass: true,
            value: finite(value),
            bound: None,
            note: None,
        }
    }

    fn check(criterion: &str, pass: bool, value: f64, bound: f64) -> Self {
        Self {
            criterion: criterion.into(),
            pass,
            value: finite(value),
            bound: finite(bound),
            note: None,
        }
    }

    fn failure(criterion: &str, note: String) -> Self {
        Self {
            criterion: criterion.into(),
            pass: false,
            value: None,
            bound: None,
            note: Some(note),
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub config_hash: String,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<PathBuf>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Versions {
    pub cli: String,
    pub core: String,
}

impl RunManifest {
    pub fn any_failed(&self) -> bool {
        self.verdicts.iter().any(|v| !v.pass)
    }
}

struct RunOutput {
    artifacts: Vec<PathBuf>,
    verdicts: Vec<Verdict>,
}

/// Run one experiment. `base_dir` anchors relative file references in the
/// config; artifacts land in `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
) -> CliResult<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();

    let outcome = dispatch(cfg, base_dir, out_dir);
    let (mut artifacts, verdicts) = match outcome {
        Ok(out) => (out.artifacts, out.verdicts),
        Err(CliError::Config(msg)) => return Err(CliError::Config(msg)),
        Err(CliError::Io(e)) => return Err(CliError::Io(e)),
        Err(err) => (
            Vec::new(),
            vec![Verdict::failure("run", err.to_string())],
        ),
    };

    let manifest_path = out_dir.join("manifest.json");
    artifacts.push(manifest_path.clone());
    let manifest = RunManifest {
        config_hash: cfg.config_hash(),
        versions: Versions {
            cli: env!("CARGO_PKG_VERSION").into(),
            core: distinv_core::VERSION.into(),
        },
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        artifacts,
        verdicts,
    };
    let body = serde_json::to_string_pretty(&manifest)?;
    io::write_atomic(&manifest_path, body.as_bytes())?;
    Ok(manifest)
}

fn dispatch(cfg: &ExperimentConfig, base: &Path, out: &Path) -> CliResult<RunOutput> {
    match &cfg.kind {
        ExperimentKind::Distance {
            metric,
            mu,
            nu,
            sinkhorn_eps,
        } => run_distance(*metric, mu, nu, *sinkhorn_eps, base, out),
        ExperimentKind::Invert { map, data, samples } => {
            run_invert(map, data, *samples, cfg.seed, base, out)
        }
        ExperimentKind::Stability {
            map,
            data,
            metric,
            perturbations,
            family,
            direction,
        } => run_stability(map, data, *metric, perturbations, *family, direction, base, out),
        ExperimentKind::RegularizeSweep {
            map,
            data,
            truth,
            alphas,
            noise_w2,
        } => run_regularize_sweep(map, data, truth, alphas, *noise_w2, base, out),
        ExperimentKind::FlowConvergence {
            map,
            target,
            init,
            scheme,
            dt,
            t_max,
            record_every,
            bandwidth,
            divergence,
            space,
            classify,
            snapshot_times,
        } => run_flow_convergence(
            map,
            target,
            init,
            *scheme,
            *dt,
            *t_max,
            *record_every,
            *bandwidth,
            *divergence,
            *space,
            *classify,
            snapshot_times,
            base,
            out,
        ),
        ExperimentKind::EquilibriumContrast {
            map,
            target,
            grid_lower,
            grid_upper,
            grid_cells,
            kl_t_max,
            w2_t_max,
        } => run_equilibrium_contrast(
            map,
            target,
            *grid_lower,
            *grid_upper,
            *grid_cells,
            *kl_t_max,
            *w2_t_max,
            base,
            out,
        ),
    }
}

/// The `{metric, value, iterations?}` record of a distance computation.
#[derive(Debug, Serialize)]
pub struct DistanceRecord {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

pub fn compute_distance(
    metric: MetricName,
    mu: &Measure,
    nu: &Measure,
    sinkhorn_eps: Option<f64>,
) -> CliResult<DistanceRecord> {
    let p = match metric {
        MetricName::W1 => 1.0,
        _ => 2.0,
    };
    let (value, iterations) = match metric {
        MetricName::W2 | MetricName::W1 => match (mu, nu) {
            (Measure::Gaussian(a), Measure::Gaussian(b)) if metric == MetricName::W2 => {
                (wasserstein_gaussian(a, b)?, None)
            }
            (Measure::Particles(a), Measure::Particles(b)) => {
                if let Some(eps) = sinkhorn_eps {
                    let out = sinkhorn(a, b, p, eps, 10_000, 1e-6)?;
                    (out.value, Some(out.iterations))
                } else {
                    (wasserstein_exact(a, b, p)?.0, None)
                }
            }
            (a, b) if a.dim() == 1 && b.dim() == 1 => {
                let qa = quantile_carrier(a)?;
                let qb = quantile_carrier(b)?;
                (wasserstein_1d(&qa, &qb, p)?, None)
            }
            _ => {
                return Err(CliError::config(
                    "this carrier pair supports Wasserstein distances only in 1D; \
                     use matching particle or Gaussian carriers",
                ))
            }
        },
        MetricName::Kl => match (mu, nu) {
            (Measure::Gaussian(a), Measure::Gaussian(b)) => (kl_gaussian(a, b)?, None),
            (Measure::Grid(a), Measure::Grid(b)) => {
                (f_divergence_grid(&FDivergenceSpec::kl(), a, b)?, None)
            }
            _ => {
                return Err(CliError::config(
                    "kl needs matching Gaussian or grid carriers",
                ))
            }
        },
        MetricName::Chi2 => match (mu, nu) {
            (Measure::Grid(a), Measure::Grid(b)) => {
                (f_divergence_grid(&FDivergenceSpec::chi_squared(), a, b)?, None)
            }
            _ => return Err(CliError::config("chi2 needs matching grid carriers")),
        },
    };
    Ok(DistanceRecord {
        metric: metric_name(metric).into(),
        value,
        iterations,
    })
}

fn metric_name(metric: MetricName) -> &'static str {
    match metric {
        MetricName::W2 => "w2",
        MetricName::W1 => "w1",
        MetricName::Kl => "kl",
        MetricName::Chi2 => "chi2",
    }
}

fn quantile_carrier(m: &Measure) -> CliResult<distinv_core::divergences::Quantile1d> {
    match m {
        Measure::Particles(p) => Ok(p.into()),
        Measure::Grid(g) => Ok(g.into()),
        Measure::Gaussian(g) => {
            let sd = g.cov()[(0, 0)].sqrt();
            let grid = g.to_grid(
                vec![g.mean()[0] - 8.0 * sd],
                vec![g.mean()[0] + 8.0 * sd],
                vec![4096],
            )?;
            Ok((&grid).into())
        }
    }
}

fn run_distance(
    metric: MetricName,
    mu: &crate::config::MeasureSpec,
    nu: &crate::config::MeasureSpec,
    sinkhorn_eps: Option<f64>,
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let mu = mu.resolve(base)?;
    let nu = nu.resolve(base)?;
    let record = compute_distance(metric, &mu, &nu, sinkhorn_eps)?;
    let path = out.join("distance.json");
    io::write_atomic(&path, format!("{}\n", serde_json::to_string_pretty(&record)?).as_bytes())?;
    let verdict = Verdict::pass("distance", record.value);
    Ok(RunOutput {
        artifacts: vec![path],
        verdicts: vec![verdict],
    })
}

fn run_invert(
    map: &crate::config::MapSpec,
    data: &crate::config::MeasureSpec,
    samples: Option<usize>,
    seed: u64,
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let linear = map.resolve(base)?;
    let data = data.resolve(base)?;
    let opts = InvertOptions {
        gaussian_samples: samples.unwrap_or(2000),
        seed,
    };
    let inverted = direct_invert(&ForwardMap::Linear(linear.clone()), &data, &opts)?;
    let path = io::write_measure(&out.join("inverted"), &inverted)?;

    // round-trip verdict where it is exact: particle data maps back onto
    // itself through A
    let mut verdicts = Vec::new();
    if let (Measure::Particles(orig), Measure::Particles(inv)) = (&data, &inverted) {
        let pushed = linear.pushforward(inv)?;
        let max_dev = (pushed.points() - orig.points()).abs().max();
        verdicts.push(Verdict::check("round_trip", max_dev < 1e-8, max_dev, 1e-8));
    } else {
        verdicts.push(Verdict::pass("invert", 0.0));
    }
    Ok(RunOutput {
        artifacts: vec![path],
        verdicts,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stability(
    map: &crate::config::MapSpec,
    data: &crate::config::MeasureSpec,
    metric: MetricName,
    perturbations: &[f64],
    family: PerturbationFamilyName,
    direction: &Option<Vec<f64>>,
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let linear = map.resolve(base)?;
    let base_measure = data.resolve(base)?;
    let gaussian = base_measure
        .as_gaussian()
        .ok_or_else(|| CliError::config("stability sweeps need a Gaussian base measure"))?;
    let sweep_metric = match metric {
        MetricName::W2 => SweepMetric::W2,
        MetricName::Kl => SweepMetric::F(FDivergenceSpec::kl()),
        other => {
            return Err(CliError::config(format!(
                "stability metric must be w2 or kl, got {}",
                metric_name(other)
            )))
        }
    };
    let family = match family {
        PerturbationFamilyName::MeanShift => PerturbationFamily::MeanShift {
            direction: direction.as_ref().map(|v| DVector::from_row_slice(v)),
        },
        PerturbationFamilyName::CovarianceInflation => PerturbationFamily::CovarianceInflation,
    };
    let reports = stability_sweep(&linear, gaussian, perturbations, &sweep_metric, &family)?;

    let mut csv = String::from("perturbation,input_distance,output_distance,bound,satisfied\n");
    let mut verdicts = Vec::new();
    for (level, r) in perturbations.iter().zip(&reports) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            level, r.input_perturbation, r.output_distance, r.bound, r.satisfied
        ));
        verdicts.push(Verdict::check(
            &format!("stability_{level}"),
            r.satisfied,
            r.output_distance,
            r.bound,
        ));
    }
    let path = out.join("report.csv");
    io::write_atomic(&path, csv.as_bytes())?;
    Ok(RunOutput {
        artifacts: vec![path],
        verdicts,
    })
}

fn run_regularize_sweep(
    map: &crate::config::MapSpec,
    data: &crate::config::MeasureSpec,
    truth: &crate::config::MeasureSpec,
    alphas: &crate::config::AlphaList,
    noise_w2: Option<f64>,
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let linear = map.resolve(base)?;
    let data = data.resolve(base)?;
    let truth_y = truth.resolve(base)?;
    let alpha_values = alphas.values()?;

    // canonical parameter-space truth A†#ρ_y*
    let truth_u: Measure = match &truth_y {
        Measure::Gaussian(g) => pushforward_gaussian(
            linear.pseudo_inverse(),
            &DVector::zeros(linear.ncols()),
            g,
        )?
        .into(),
        Measure::Particles(m) => {
            let pts = m.points() * linear.pseudo_inverse().transpose();
            distinv_core::measures::ParticleMeasure::new(pts, m.weights().clone())?.into()
        }
        Measure::Grid(_) => {
            return Err(CliError::config(
                "regularize sweeps need Gaussian or particle truth",
            ))
        }
    };
    // noise level: supplied, or computed when both carriers are Gaussian
    let noise = match noise_w2 {
        Some(n) => n,
        None => match (&truth_y, &data) {
            (Measure::Gaussian(a), Measure::Gaussian(b)) => wasserstein_gaussian(a, b)?,
            (Measure::Particles(a), Measure::Particles(b)) => wasserstein_exact(a, b, 2.0)?.0,
            _ => {
                return Err(CliError::config(
                    "supply parameters.noiseW2 when truth and data carriers differ",
                ))
            }
        },
    };
    let moment = truth_y.second_moment();

    let mut csv = String::from("alpha,error_w2,noise_term,reg_term,bound\n");
    let mut verdicts = Vec::new();
    let mut best: Option<(f64, f64)> = None; // (error, alpha)
    for &alpha in &alpha_values {
        let sol = solve_w2_tikhonov(&linear, &data, alpha, None)?;
        let error = match (&sol.solution, &truth_u) {
            (Measure::Gaussian(a), Measure::Gaussian(b)) => wasserstein_gaussian(a, b)?,
            (Measure::Particles(a), Measure::Particles(b)) => wasserstein_exact(a, b, 2.0)?.0,
            _ => {
                return Err(CliError::config(
                    "truth and data carriers must match for the sweep",
                ))
            }
        };
        let (noise_term, reg_term, bound) = if alpha > 0.0 {
            let b = tikhonov_error_bound(&linear, alpha, noise, moment)?;
            (b.noise_term, b.reg_term, b.total)
        } else {
            (0.0, 0.0, f64::INFINITY)
        };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            alpha, error, noise_term, reg_term, bound
        ));
        if alpha > 0.0 {
            verdicts.push(Verdict::check(
                &format!("error_within_bound_alpha_{alpha}"),
                error <= bound + 1e-6,
                error,
                bound,
            ));
        }
        if best.is_none_or(|(e, _)| error < e) {
            best = Some((error, alpha));
        }
    }

    // balance-α verdict: the empirical minimizer sits within one log-grid
    // step of σ_m δ / √E|y|²
    if let (Some((_, alpha_emp)), Some(log_step)) = (best, alphas.log_step()) {
        let alpha_star = balance_alpha(&linear, noise, moment);
        if alpha_star > 0.0 && alpha_emp > 0.0 {
            let off = (alpha_emp.ln() - alpha_star.ln()).abs();
            verdicts.push(Verdict::check(
                "balance_alpha",
                off <= log_step + 1e-12,
                alpha_emp,
                alpha_star,
            ));
        }
    }

    let path = out.join("sweep.csv");
    io::write_atomic(&path, csv.as_bytes())?;
    Ok(RunOutput {
        artifacts: vec![path],
        verdicts,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_flow_convergence(
    map: &crate::config::MapSpec,
    target: &crate::config::MeasureSpec,
    init: &crate::config::MeasureSpec,
    scheme: SchemeName,
    dt: f64,
    t_max: f64,
    record_every: usize,
    bandwidth: Option<f64>,
    divergence: DivergenceName,
    space: SpaceName,
    classify: bool,
    snapshot_times: &[f64],
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let linear = map.resolve(base)?;
    let target = target.resolve(base)?;
    let init = init.resolve(base)?;
    let scheme = match scheme {
        SchemeName::ParticleEuler => FlowScheme::ParticleEuler,
        SchemeName::ParticleRk4 => FlowScheme::ParticleRk4,
        SchemeName::GridFokkerPlanck => FlowScheme::GridFokkerPlanck,
        SchemeName::GaussianOde => FlowScheme::GaussianOde,
    };
    let spec = match divergence {
        DivergenceName::Kl => FDivergenceSpec::kl(),
        DivergenceName::ChiSquared => FDivergenceSpec::chi_squared(),
        DivergenceName::TotalVariationSquared => FDivergenceSpec::total_variation_squared(),
    };
    let mut cfg = FlowConfig::new(
        spec,
        ForwardMap::Linear(linear.clone()),
        target.clone(),
        dt,
        t_max,
        scheme,
    )?
    .with_record_every(record_every)?;
    if let Some(h) = bandwidth {
        cfg = cfg.with_bandwidth(h);
    }
    let trace = run_flow(&init, &cfg)?;

    let mut artifacts = Vec::new();
    let mut csv = String::from("t,kl,w2\n");
    for (i, t) in trace.times.iter().enumerate() {
        let w2 = trace
            .w2_to_target
            .as_ref()
            .map(|w| w[i].to_string())
            .unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", t, trace.kl_to_target[i], w2));
    }
    let trace_path = out.join("trace.csv");
    io::write_atomic(&trace_path, csv.as_bytes())?;
    artifacts.push(trace_path);

    for &t in snapshot_times {
        if let Some(k) = trace
            .times
            .iter()
            .position(|&rt| (rt - t).abs() <= dt * record_every as f64)
        {
            let path = io::write_measure(
                &out.join(format!("snapshot_t{}", trace.times[k])),
                &trace.snapshots[k],
            )?;
            artifacts.push(path);
        }
    }

    let mut verdicts = vec![Verdict::check(
        "trace_valid",
        trace.is_valid(),
        trace.clamped_mass,
        1e-6,
    )];

    // exponential-decay certificate when the target is λ-log-concave Gaussian
    let certificate = target.as_gaussian().map(|g| {
        let lambda = g.log_concavity().lambda;
        certify_decay_bound(&trace, linear.sigma_min(), lambda, 0.05)
    });
    if let Some(cert) = &certificate {
        verdicts.push(Verdict::check(
            "decay_bound",
            cert.satisfied,
            cert.worst_ratio,
            1.05,
        ));
    }

    let classification = if classify {
        match target.as_gaussian() {
            Some(g) => {
                let fs = match space {
                    SpaceName::Reduced => FlowSpace::Reduced,
                    SpaceName::Data => FlowSpace::Data,
                    SpaceName::Parameter => FlowSpace::Parameter,
                };
                Some(classify_equilibrium(&trace, &linear, g, fs)?)
            }
            None => None,
        }
    } else {
        None
    };

    let report = serde_json::json!({
        "decayFit": trace.decay_fit.map(|f| serde_json::json!({"rate": f.rate, "r2": f.r2})),
        "boundCertificate": certificate.map(|c| serde_json::json!({
            "rateBound": c.rate_bound,
            "satisfied": c.satisfied,
            "worstRatio": c.worst_ratio,
        })),
        "equilibrium": classification.map(|c| serde_json::json!({
            "label": label_name(c.label),
            "distConditional": c.dist_conditional,
            "distMarginal": c.dist_marginal,
        })),
        "clampedMass": trace.clamped_mass,
        "valid": trace.is_valid(),
    });
    let report_path = out.join("report.json");
    io::write_atomic(
        &report_path,
        format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
    )?;
    artifacts.push(report_path);

    Ok(RunOutput {
        artifacts,
        verdicts,
    })
}

fn label_name(label: EquilibriumLabel) -> &'static str {
    match label {
        EquilibriumLabel::Conditional => "conditional",
        EquilibriumLabel::Marginal => "marginal",
        EquilibriumLabel::Neither => "neither",
    }
}

#[allow(clippy::too_many_arguments)]
fn run_equilibrium_contrast(
    map: &crate::config::MapSpec,
    target: &crate::config::MeasureSpec,
    grid_lower: f64,
    grid_upper: f64,
    grid_cells: usize,
    kl_t_max: f64,
    w2_t_max: f64,
    base: &Path,
    out: &Path,
) -> CliResult<RunOutput> {
    let linear = map.resolve(base)?;
    let target = target.resolve(base)?;
    let target = target
        .as_gaussian()
        .ok_or_else(|| CliError::config("equilibrium contrast needs a Gaussian target"))?;
    if linear.rank() != 1 {
        return Err(CliError::config(
            "equilibrium contrast runs the reduced flow; the map must have rank 1",
        ));
    }

    // KL flow: reduced grid Fokker–Planck on Col(A)
    let init_grid = GaussianMeasure::scalar(0.5 * (grid_upper + grid_lower) + 2.0, 1.0)
        .map_err(CliError::from)?
        .to_grid(vec![grid_lower], vec![grid_upper], vec![grid_cells])
        .map_err(CliError::from)?;
    let mobility = DMatrix::from_element(1, 1, {
        let s = linear.singular_values()[0];
        s * s
    });
    let dt = 0.9 * distinv_core::flow::cfl_limit(&init_grid, &mobility);
    let cfg = FlowConfig::new(
        FDivergenceSpec::kl(),
        ForwardMap::Linear(linear.clone()),
        Measure::Gaussian(target.clone()),
        dt,
        kl_t_max,
        FlowScheme::GridFokkerPlanck,
    )?
    .with_record_every(((kl_t_max / dt) as usize / 64).max(1))?;
    let kl_trace = run_flow(&Measure::Grid(init_grid), &cfg)?;
    let kl_class = classify_equilibrium(&kl_trace, &linear, target, FlowSpace::Reduced)?;

    // W₂-objective flow: Gaussian relaxation to the A†-pushforward limit
    let m = linear.ncols();
    let w2_init = GaussianMeasure::new(
        DVector::from_element(m, -1.0),
        DMatrix::identity(m, m) * 0.5,
    )
    .map_err(CliError::from)?;
    let w2_trace = run_w2_relaxation(&w2_init, &linear, target, 0.05, w2_t_max, 20)?;
    let w2_class = classify_equilibrium(&w2_trace, &linear, target, FlowSpace::Parameter)?;

    let mut artifacts = Vec::new();
    for (name, trace) in [("kl_trace.csv", &kl_trace), ("w2_trace.csv", &w2_trace)] {
        let mut csv = String::from("t,kl,w2\n");
        for (i, t) in trace.times.iter().enumerate() {
            let w2 = trace
                .w2_to_target
                .as_ref()
                .map(|w| w[i].to_string())
                .unwrap_or_default();
            csv.push_str(&format!("{},{},{}\n", t, trace.kl_to_target[i], w2));
        }
        let path = out.join(name);
        io::write_atomic(&path, csv.as_bytes())?;
        artifacts.push(path);
    }

    let report = serde_json::json!({
        "klFlow": {
            "label": label_name(kl_class.label),
            "distConditional": kl_class.dist_conditional,
            "distMarginal": kl_class.dist_marginal,
        },
        "w2Flow": {
            "label": label_name(w2_class.label),
            "distConditional": w2_class.dist_conditional,
            "distMarginal": w2_class.dist_marginal,
        },
    });
    let report_path = out.join("report.json");
    io::write_atomic(
        &report_path,
        format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
    )?;
    artifacts.push(report_path);

    let verdicts = vec![
        Verdict::check(
            "kl_flow_conditional",
            kl_class.label == EquilibriumLabel::Conditional,
            kl_class.dist_conditional,
            kl_class.dist_marginal,
        ),
        Verdict::check(
            "w2_flow_marginal",
            w2_class.label == EquilibriumLabel::Marginal,
            w2_class.dist_marginal,
            w2_class.dist_conditional,
        ),
    ];
    Ok(RunOutput {
        artifacts,
        verdicts,
    })
}

/// Divergence/regularizer pairing of the `regularize` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizePair {
    Kl,
    W2,
}

impl std::str::FromStr for RegularizePair {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "kl" => Ok(RegularizePair::Kl),
            "w2" => Ok(RegularizePair::W2),
            other => Err(CliError::config(format!(
                "pair must be kl or w2, got '{other}'"
            ))),
        }
    }
}

/// One regularized solve: writes the solution measure plus a JSON report
/// (normalization constant and error terms for the entropy pairing, bound
/// terms for the Tikhonov pairing). Returns the artifact paths.
#[allow(clippy::too_many_arguments)]
pub fn run_regularize_once(
    pair: RegularizePair,
    map: &LinearForwardMap,
    data: &Measure,
    prior: Option<&Measure>,
    alpha: f64,
    truth: Option<&Measure>,
    noise_w2: Option<f64>,
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut artifacts = Vec::new();
    match pair {
        RegularizePair::Kl => {
            let prior = prior
                .ok_or_else(|| CliError::config("the kl pairing needs --prior"))?
                .as_grid()
                .ok_or_else(|| CliError::config("the kl prior must be a grid measure"))?;
            let fmap = ForwardMap::Linear(map.clone());
            let sol =
                distinv_core::variational::solve_entropy_entropy(&fmap, data, prior, alpha)?;
            let sol_path =
                io::write_measure(&out.join("solution"), &Measure::Grid(sol.solution.clone()))?;
            artifacts.push(sol_path);
            let identity = match truth {
                Some(t) => {
                    let truth_grid = t.as_grid().ok_or_else(|| {
                        CliError::config("the kl truth must be a grid measure")
                    })?;
                    Some(distinv_core::variational::entropy_error_identity(
                        &sol,
                        truth_grid,
                        &fmap,
                        data,
                        &Measure::Grid(prior.clone()),
                    )?)
                }
                None => None,
            };
            let report = serde_json::json!({
                "pair": "kl",
                "alpha": alpha,
                "normalizationC": sol.normalization_c,
                "errorIdentity": identity.map(|r| serde_json::json!({
                    "lhs": r.lhs,
                    "rhs": r.rhs,
                    "residual": r.residual,
                    "klDataTerm": r.kl_data_term,
                    "klPriorTerm": r.kl_prior_term,
                    "logC": r.log_c,
                })),
            });
            let report_path = out.join("report.json");
            io::write_atomic(
                &report_path,
                format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
            )?;
            artifacts.push(report_path);
        }
        RegularizePair::W2 => {
            let sol = solve_w2_tikhonov(map, data, alpha, noise_w2)?;
            let sol_path = io::write_measure(&out.join("solution"), &sol.solution)?;
            artifacts.push(sol_path);
            let error_w2 = match truth {
                Some(Measure::Gaussian(t)) => {
                    let truth_u = pushforward_gaussian(
                        map.pseudo_inverse(),
                        &DVector::zeros(map.ncols()),
                        t,
                    )?;
                    sol.solution
                        .as_gaussian()
                        .map(|g| wasserstein_gaussian(g, &truth_u))
                        .transpose()?
                }
                _ => None,
            };
            let report = serde_json::json!({
                "pair": "w2",
                "alpha": alpha,
                "operator": (0..sol.operator.nrows()).map(|i| {
                    (0..sol.operator.ncols()).map(|j| sol.operator[(i, j)]).collect::<Vec<_>>()
                }).collect::<Vec<_>>(),
                "bound": sol.bound.map(|b| serde_json::json!({
                    "noiseTerm": b.noise_term,
                    "regTerm": b.reg_term,
                    "regTermSharp": b.reg_term_sharp,
                    "total": b.total,
                })),
                "errorW2": error_w2,
            });
            let report_path = out.join("report.json");
            io::write_atomic(
                &report_path,
                format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
            )?;
            artifacts.push(report_path);
        }
    }
    Ok(artifacts)
}

/// Run every `*.json` config in a directory, at most `jobs` at a time.
/// Each config lands in `<out_root>/<config-stem>/`. Returns the manifests
/// in the deterministic directory order.
pub fn run_batch(
    dir: &Path,
    out_root: &Path,
    jobs: usize,
) -> CliResult<Vec<(PathBuf, CliResult<RunManifest>)>> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(CliError::config(format!(
            "no .json configs in {}",
            dir.display()
        )));
    }
    let jobs = jobs.max(1);
    let mut results: Vec<Option<(PathBuf, CliResult<RunManifest>)>> =
        (0..configs.len()).map(|_| None).collect();
    for chunk_start in (0..configs.len()).step_by(jobs) {
        let chunk_end = (chunk_start + jobs).min(configs.len());
        let handles: Vec<_> = configs[chunk_start..chunk_end]
            .iter()
            .cloned()
            .map(|path| {
                let base = dir.to_path_buf();
                let out_root = out_root.to_path_buf();
                std::thread::spawn(move || {
                    let result = ExperimentConfig::from_file(&path).and_then(|cfg| {
                        let stem = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "run".into());
                        let out = cfg
                            .output_dir
                            .clone()
                            .unwrap_or_else(|| out_root.join(stem));
                        run_experiment(&cfg, &base, &out)
                    });
                    (path, result)
                })
            })
            .collect();
        for (offset, handle) in handles.into_iter().enumerate() {
            let joined = handle
                .join()
                .map_err(|_| CliError::Numerical("worker thread panicked".into()))?;
            results[chunk_start + offset] = Some(joined);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("all slots filled")).collect())
}
