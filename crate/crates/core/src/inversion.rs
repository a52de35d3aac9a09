//! Direct inversion of the data distribution and stability of solution sets.
//!
//! For invertible maps the pre-image measure G⁻¹#ρ_y is unique; for
//! underdetermined linear maps the solution set is represented by its
//! canonical minimal-norm element A†#ρ_y, for which the set distances of
//! both metrics are attained. The two stability regimes are the point of
//! this module: W₂ distances between solution sets amplify by 1/σ_min(A),
//! f-divergences pass through unchanged.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::divergences::{
    bures_wasserstein, f_divergence_grid, kl_gaussian, wasserstein_exact, FDivergenceKind,
    FDivergenceSpec,
};
use crate::error::{Error, Result};
use crate::maps::{affine_image_moments, ForwardMap, LinearForwardMap};
use crate::measures::{GaussianMeasure, GridMeasure, Measure, ParticleMeasure};

/// Controls the sampling fallback used when an inverted Gaussian leaves the
/// nondegenerate class (underdetermined maps, nonlinear maps).
#[derive(Debug, Clone, Copy)]
pub struct InvertOptions {
    pub gaussian_samples: usize,
    pub seed: u64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            gaussian_samples: 2000,
            seed: 0,
        }
    }
}

/// Pre-image measure of `data` under `map`.
///
/// Linear maps use the pseudoinverse as the canonical pre-image selector;
/// smooth maps require an inverse. Gaussians whose image would be degenerate
/// (subspace-supported) are returned as particle clouds of mapped samples.
pub fn direct_invert(map: &ForwardMap, data: &Measure, opts: &InvertOptions) -> Result<Measure> {
    match map {
        ForwardMap::Linear(a) => invert_linear(a, data, opts),
        ForwardMap::Smooth(g) => {
            if !g.has_inverse() {
                return Err(Error::MissingInverse);
            }
            match data {
                Measure::Particles(m) => {
                    let mut points = DMatrix::zeros(m.len(), g.input_dim());
                    for i in 0..m.len() {
                        let u = g.inverse(&m.point(i))?;
                        points.row_mut(i).copy_from(&u.transpose());
                    }
                    Ok(ParticleMeasure::new(points, m.weights().clone())?.into())
                }
                Measure::Gaussian(gm) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    let cloud = gm.sample(opts.gaussian_samples, &mut rng)?;
                    let mut points = DMatrix::zeros(cloud.len(), g.input_dim());
                    for i in 0..cloud.len() {
                        let u = g.inverse(&cloud.point(i))?;
                        points.row_mut(i).copy_from(&u.transpose());
                    }
                    Ok(ParticleMeasure::new(points, cloud.weights().clone())?.into())
                }
                Measure::Grid(_) => Err(Error::InvalidParameter {
                    name: "data",
                    reason: "grid pre-images through nonlinear maps are not supported; \
                             use particle or Gaussian carriers"
                        .into(),
                }),
            }
        }
    }
}

fn invert_linear(a: &LinearForwardMap, data: &Measure, opts: &InvertOptions) -> Result<Measure> {
    let pinv = a.pseudo_inverse();
    match data {
        Measure::Particles(m) => {
            if m.dim() != a.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: a.nrows(),
                    got: m.dim(),
                });
            }
            let points = m.points() * pinv.transpose();
            Ok(ParticleMeasure::new(points, m.weights().clone())?.into())
        }
        Measure::Gaussian(g) => {
            let (mean, cov) = affine_image_moments(pinv, &DVector::zeros(a.ncols()), g)?;
            match GaussianMeasure::new(mean, cov) {
                Ok(out) => Ok(out.into()),
                Err(_) => {
                    // degenerate pre-image: keep it as a particle cloud
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    let cloud = g.sample(opts.gaussian_samples, &mut rng)?;
                    let points = cloud.points() * pinv.transpose();
                    Ok(ParticleMeasure::new(points, cloud.weights().clone())?.into())
                }
            }
        }
        Measure::Grid(grid) => {
            if a.nrows() != a.ncols() {
                return Err(Error::InvalidParameter {
                    name: "data",
                    reason: "grid carriers are only invertible through square full-rank maps"
                        .into(),
                });
            }
            pull_back_grid_linear(a, grid)
        }
    }
}

/// Change of variables ρ_u(u) = ρ_y(A u) |det A| onto the axis-aligned
/// bounding box of the pre-image of the data box.
fn pull_back_grid_linear(a: &LinearForwardMap, grid: &GridMeasure) -> Result<Measure> {
    let d = grid.dim();
    if a.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: d,
        });
    }
    let pinv = a.pseudo_inverse();
    // pre-image box corners
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for corner in 0..(1usize << d) {
        let y = DVector::from_iterator(
            d,
            (0..d).map(|k| {
                if (corner >> k) & 1 == 1 {
                    grid.upper()[k]
                } else {
                    grid.lower()[k]
                }
            }),
        );
        let u = pinv * y;
        for k in 0..d {
            lower[k] = lower[k].min(u[k]);
            upper[k] = upper[k].max(u[k]);
        }
    }
    let out = GridMeasure::from_fn(lower, upper, grid.shape().to_vec(), |u| {
        let y = a.apply(&DVector::from_row_slice(u));
        grid.density_at(y.as_slice())
    })?;
    Ok(out.into())
}

/// Which metric a stability report was computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMetric {
    W2,
    FDivergence,
}

/// One perturbation-response record of a stability experiment.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Distance between the two data distributions.
    pub input_perturbation: f64,
    /// Distance between the two canonical inverted measures.
    pub output_distance: f64,
    /// Theoretical ceiling for the output distance.
    pub bound: f64,
    pub metric: StabilityMetric,
    pub satisfied: bool,
}

impl StabilityReport {
    fn new(input: f64, output: f64, bound: f64, metric: StabilityMetric) -> Self {
        let satisfied = if output.is_infinite() && bound.is_infinite() {
            true
        } else {
            output <= bound * (1.0 + 1e-6)
        };
        Self {
            input_perturbation: input,
            output_distance: output,
            bound,
            metric,
            satisfied,
        }
    }
}

/// Solution set S_ρy = {ρ_u : A#ρ_u = ρ_y}, carried by its canonical
/// minimal-norm element A†#ρ_y.
#[derive(Debug, Clone)]
pub struct SolutionSetHandle {
    map: LinearForwardMap,
    data: Measure,
    canonical: CanonicalElement,
}

/// The canonical element may be a degenerate Gaussian; its moments are kept
/// raw so Bures distances stay well defined.
#[derive(Debug, Clone)]
pub enum CanonicalElement {
    Particles(ParticleMeasure),
    GaussianMoments { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl SolutionSetHandle {
    pub fn new(map: &LinearForwardMap, data: &Measure) -> Result<Self> {
        let canonical = match data {
            Measure::Particles(m) => {
                if m.dim() != map.nrows() {
                    return Err(Error::DimensionMismatch {
                        expected: map.nrows(),
                        got: m.dim(),
                    });
                }
                let points = m.points() * map.pseudo_inverse().transpose();
                CanonicalElement::Particles(ParticleMeasure::new(points, m.weights().clone())?)
            }
            Measure::Gaussian(g) => {
                let (mean, cov) = affine_image_moments(
                    map.pseudo_inverse(),
                    &DVector::zeros(map.ncols()),
                    g,
                )?;
                CanonicalElement::GaussianMoments { mean, cov }
            }
            Measure::Grid(_) => {
                return Err(Error::InvalidParameter {
                    name: "data",
                    reason: "solution sets are materialized for particle or Gaussian data".into(),
                })
            }
        };
        Ok(Self {
            map: map.clone(),
            data: data.clone(),
            canonical,
        })
    }

    pub fn map(&self) -> &LinearForwardMap {
        &self.map
    }

    pub fn data(&self) -> &Measure {
        &self.data
    }

    pub fn canonical(&self) -> &CanonicalElement {
        &self.canonical
    }
}

/// d^W₂(S¹, S²) = W₂(A†#ρ_y¹, A†#ρ_y²), bounded by W₂(ρ_y¹, ρ_y²)/σ_min(A).
pub fn solution_set_distance_w2(
    map: &LinearForwardMap,
    data1: &Measure,
    data2: &Measure,
) -> Result<StabilityReport> {
    let h1 = SolutionSetHandle::new(map, data1)?;
    let h2 = SolutionSetHandle::new(map, data2)?;
    let input = w2_between(data1, data2)?;
    let output = match (h1.canonical(), h2.canonical()) {
        (CanonicalElement::Particles(a), CanonicalElement::Particles(b)) => {
            wasserstein_exact(a, b, 2.0)?.0
        }
        (
            CanonicalElement::GaussianMoments { mean: m1, cov: c1 },
            CanonicalElement::GaussianMoments { mean: m2, cov: c2 },
        ) => bures_wasserstein(m1, c1, m2, c2)?,
        _ => {
            return Err(Error::InvalidParameter {
                name: "data",
                reason: "both data measures must share a carrier".into(),
            })
        }
    };
    let bound = input / map.sigma_min();
    Ok(StabilityReport::new(input, output, bound, StabilityMetric::W2))
}

fn w2_between(data1: &Measure, data2: &Measure) -> Result<f64> {
    match (data1, data2) {
        (Measure::Particles(a), Measure::Particles(b)) => Ok(wasserstein_exact(a, b, 2.0)?.0),
        (Measure::Gaussian(a), Measure::Gaussian(b)) => {
            bures_wasserstein(a.mean(), a.cov(), b.mean(), b.cov())
        }
        _ => Err(Error::InvalidParameter {
            name: "data",
            reason: "both data measures must share a carrier".into(),
        }),
    }
}

/// d^f(S¹, S²) = D_f(ρ_y¹‖ρ_y²): the set distance equals the data
/// divergence, so output and bound coincide by construction.
///
/// Gaussian carriers use the closed KL form (the KL spec is required there);
/// grid carriers accept any generator. An absolute-continuity failure makes
/// both sides +∞ and the report satisfied.
pub fn solution_set_distance_f(
    spec: &FDivergenceSpec,
    data1: &Measure,
    data2: &Measure,
) -> Result<StabilityReport> {
    let value = match (data1, data2) {
        (Measure::Gaussian(a), Measure::Gaussian(b)) => {
            if spec.kind() != FDivergenceKind::Kl {
                return Err(Error::InvalidParameter {
                    name: "spec",
                    reason: "Gaussian carriers support the KL spec; use grids otherwise".into(),
                });
            }
            kl_gaussian(a, b)?
        }
        (Measure::Grid(a), Measure::Grid(b)) => f_divergence_grid(spec, a, b)?,
        _ => {
            return Err(Error::InvalidParameter {
                name: "data",
                reason: "f-divergence set distance needs matching grid or Gaussian carriers"
                    .into(),
            })
        }
    };
    Ok(StabilityReport::new(
        value,
        value,
        value,
        StabilityMetric::FDivergence,
    ))
}

/// Family of data perturbations used by [`stability_sweep`].
#[derive(Debug, Clone)]
pub enum PerturbationFamily {
    /// Mean shift of magnitude δ along a direction (default: the weakest
    /// left-singular direction of the map, where W₂ amplification peaks).
    MeanShift { direction: Option<DVector<f64>> },
    /// Covariance scaling Σ ↦ (1+δ)Σ.
    CovarianceInflation,
}

/// Metric selector for [`stability_sweep`].
#[derive(Debug, Clone)]
pub enum SweepMetric {
    W2,
    F(FDivergenceSpec),
}

/// One stability report per perturbation level, in input order.
pub fn stability_sweep(
    map: &LinearForwardMap,
    base: &GaussianMeasure,
    perturbations: &[f64],
    metric: &SweepMetric,
    family: &PerturbationFamily,
) -> Result<Vec<StabilityReport>> {
    if perturbations.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "perturbations",
            reason: "levels must be finite".into(),
        });
    }
    let base_measure: Measure = base.clone().into();
    let mut out = Vec::with_capacity(perturbations.len());
    for &delta in perturbations {
        let perturbed = perturb(map, base, delta, family)?;
        let report = match metric {
            SweepMetric::W2 => solution_set_distance_w2(map, &base_measure, &perturbed.into())?,
            SweepMetric::F(spec) => {
                solution_set_distance_f(spec, &base_measure, &perturbed.into())?
            }
        };
        out.push(report);
    }
    Ok(out)
}

fn perturb(
    map: &LinearForwardMap,
    base: &GaussianMeasure,
    delta: f64,
    family: &PerturbationFamily,
) -> Result<GaussianMeasure> {
    match family {
        PerturbationFamily::MeanShift { direction } => {
            let dir = match direction {
                Some(v) => {
                    if v.len() != base.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: base.dim(),
                            got: v.len(),
                        });
                    }
                    v.normalize()
                }
                None => {
                    // weakest left-singular direction of A
                    let r = map.rank();
                    map.column_space_basis().column(r - 1).into_owned()
                }
            };
            GaussianMeasure::new(base.mean() + delta * dir, base.cov().clone())
        }
        PerturbationFamily::CovarianceInflation => {
            GaussianMeasure::new(base.mean().clone(), base.cov() * (1.0 + delta))
        }
    }
}
