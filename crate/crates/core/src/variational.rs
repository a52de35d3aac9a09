//! Regularized variational solvers for the two divergence/regularizer
//! pairings with closed-form optima.
//!
//! The entropy-entropy pairing picks the density proportional to
//! [(G⁻¹#ρ_y) Mᵅ]^(1/(1+α)) on a parameter grid and satisfies an exact
//! error identity against the ground truth. The W₂-W₂ pairing is the
//! measure-level Tikhonov regressor: the minimizer is the affine pushforward
//! through (AᵀA + α²I)⁻¹Aᵀ, with an a-priori error bound split into a noise
//! term and a regularization term.

use nalgebra::{DMatrix, DVector};

use crate::divergences::{wasserstein_exact, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::maps::{pushforward_gaussian, ForwardMap, LinearForwardMap};
use crate::measures::{GridMeasure, Measure, ParticleMeasure};

/// Output of the entropy-entropy solver.
#[derive(Debug, Clone)]
pub struct EntropyRegularizedSolution {
    /// Normalized optimal density on the parameter grid.
    pub solution: GridMeasure,
    pub alpha: f64,
    /// C of the closed form: inverse mass of the unnormalized optimum;
    /// tends to 1 as α → 0.
    pub normalization_c: f64,
    /// G⁻¹#data evaluated on the parameter grid (normalized).
    pub pulled_back_data: GridMeasure,
}

/// Density of `data` at a point, evaluated from whichever carrier it has.
fn density_of(data: &Measure, y: &DVector<f64>) -> Result<f64> {
    match data {
        Measure::Gaussian(g) => Ok(g.density(y)),
        Measure::Grid(g) => Ok(g.density_at(y.as_slice())),
        Measure::Particles(_) => Err(Error::InvalidParameter {
            name: "data",
            reason: "particle carriers have no density; smooth them with a KDE first".into(),
        }),
    }
}

/// Pull a data-space density back through G onto the cells of `grid`:
/// u ↦ ρ_y(G(u)) |det ∇G(u)|. Requires a square (invertible) map.
fn pull_back_density(map: &ForwardMap, data: &Measure, grid: &GridMeasure) -> Result<Vec<f64>> {
    if map.input_dim() != map.output_dim() {
        return Err(Error::ShapeError {
            rows: map.output_dim(),
            cols: map.input_dim(),
            reason: "entropy-entropy solver needs an invertible (square) map".into(),
        });
    }
    if grid.dim() != map.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.input_dim(),
            got: grid.dim(),
        });
    }
    let mut out = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.n_cells() {
        let u = DVector::from_row_slice(&grid.cell_center(i));
        let y = map.evaluate(&u);
        let det = map.jacobian(&u).determinant().abs();
        out.push(density_of(data, &y)? * det);
    }
    Ok(out)
}

/// Closed-form optimum of the KL-KL objective on the prior's grid:
/// density ∝ [(G⁻¹#data) · priorᵅ]^(1/(1+α)).
pub fn solve_entropy_entropy(
    map: &ForwardMap,
    data: &Measure,
    prior: &GridMeasure,
    alpha: f64,
) -> Result<EntropyRegularizedSolution> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "regularization weight must be nonnegative".into(),
        });
    }
    let pulled = pull_back_density(map, data, prior)?;
    if alpha > 0.0 {
        let bad = pulled
            .iter()
            .zip(prior.density())
            .filter(|(&d, &m)| d > DENSITY_FLOOR && m <= DENSITY_FLOOR)
            .count();
        if bad > 0 {
            return Err(Error::SupportMismatch { cells: bad });
        }
    }
    let exponent = 1.0 / (1.0 + alpha);
    let unnormalized: Vec<f64> = pulled
        .iter()
        .zip(prior.density())
        .map(|(&d, &m)| {
            if d <= DENSITY_FLOOR {
                0.0
            } else if alpha == 0.0 {
                d
            } else {
                // log-space geometric mean: a convex combination of the two
                // log-densities, so m^α never underflows at large α
                ((d.ln() + alpha * m.ln()) * exponent).exp()
            }
        })
        .collect();
    let mass: f64 = crate::linalg::compensated_sum(unnormalized.iter().copied()) * prior.cell_volume();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::ZeroMass { mass });
    }
    let solution = GridMeasure::normalized(
        prior.lower().to_vec(),
        prior.upper().to_vec(),
        prior.shape().to_vec(),
        unnormalized,
    )?;
    let pulled_back_data = GridMeasure::normalized(
        prior.lower().to_vec(),
        prior.upper().to_vec(),
        prior.shape().to_vec(),
        pulled,
    )?;
    Ok(EntropyRegularizedSolution {
        solution,
        alpha,
        normalization_c: 1.0 / mass,
        pulled_back_data,
    })
}

/// Both sides of the error identity
/// KL(ρ_u*‖ρ_u^δ) = KL(ρ_y*‖ρ_y^δ)/(1+α) + α·KL(ρ_y*‖G#M)/(1+α) − log C.
#[derive(Debug, Clone, Copy)]
pub struct ErrorIdentityRecord {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// KL(ρ_y*‖ρ_y^δ), evaluated on the parameter grid.
    pub kl_data_term: f64,
    /// KL(ρ_y*‖G#M), evaluated on the parameter grid.
    pub kl_prior_term: f64,
    pub log_c: f64,
}

/// Evaluates the error identity of the entropy-entropy solution against a
/// ground-truth parameter density.
///
/// All three KL integrals share the truth's grid and midpoint rule, so the
/// residual reflects quadrature error only (O(h²) in the spacing).
pub fn entropy_error_identity(
    sol: &EntropyRegularizedSolution,
    truth: &GridMeasure,
    map: &ForwardMap,
    data: &Measure,
    prior: &Measure,
) -> Result<ErrorIdentityRecord> {
    if !truth.same_geometry(&sol.solution) {
        return Err(Error::GridMismatch(
            "truth and solution grids must coincide".into(),
        ));
    }
    let alpha = sol.alpha;
    let vol = truth.cell_volume();
    let pulled = pull_back_density(map, data, truth)?;

    let mut lhs = 0.0;
    let mut kl_data = 0.0;
    let mut kl_prior = 0.0;
    let cells = truth
        .density()
        .iter()
        .zip(sol.solution.density())
        .zip(&pulled)
        .enumerate();
    for (i, ((&t, &s), &d)) in cells {
        if t <= DENSITY_FLOOR {
            continue;
        }
        let u = DVector::from_row_slice(&truth.cell_center(i));
        let m = match prior {
            Measure::Gaussian(g) => g.density(&u),
            Measure::Grid(g) => g.density_at(u.as_slice()),
            Measure::Particles(_) => {
                return Err(Error::InvalidParameter {
                    name: "prior",
                    reason: "particle priors have no density".into(),
                })
            }
        };
        if s <= DENSITY_FLOOR || d <= DENSITY_FLOOR || m <= DENSITY_FLOOR {
            return Ok(ErrorIdentityRecord {
                lhs: f64::INFINITY,
                rhs: f64::INFINITY,
                residual: 0.0,
                kl_data_term: f64::INFINITY,
                kl_prior_term: f64::INFINITY,
                log_c: sol.normalization_c.ln(),
            });
        }
        lhs += t * (t / s).ln() * vol;
        kl_data += t * (t / d).ln() * vol;
        kl_prior += t * (t / m).ln() * vol;
    }
    let log_c = sol.normalization_c.ln();
    let rhs = kl_data / (1.0 + alpha) + alpha * kl_prior / (1.0 + alpha) - log_c;
    Ok(ErrorIdentityRecord {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        kl_data_term: kl_data,
        kl_prior_term: kl_prior,
        log_c,
    })
}

/// Error-bound terms of the W₂ Tikhonov solution.
#[derive(Debug, Clone, Copy)]
pub struct TikhonovBound {
    /// √(1/(2α)) · W₂(ρ_y*, ρ_y^δ) — measurement-noise contribution.
    pub noise_term: f64,
    /// √(α/(2σ_m²)) · √E|y|² — regularization contribution.
    pub reg_term: f64,
    /// Sharper mid-form √(α²/(σ_m(σ_m²+α²))) · √E|y|².
    pub reg_term_sharp: f64,
    pub total: f64,
    pub total_sharp: f64,
}

/// Populates the two-term a-priori error bound for a given noise level
/// δ = W₂(ρ_y*, ρ_y^δ) and data second moment E|y|².
pub fn tikhonov_error_bound(
    map: &LinearForwardMap,
    alpha: f64,
    data_noise: f64,
    data_second_moment: f64,
) -> Result<TikhonovBound> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "error bound needs alpha > 0".into(),
        });
    }
    let sigma_m = map.sigma_min();
    let root_moment = data_second_moment.max(0.0).sqrt();
    let noise_term = (1.0 / (2.0 * alpha)).sqrt() * data_noise;
    let reg_term = (alpha / (2.0 * sigma_m * sigma_m)).sqrt() * root_moment;
    let reg_term_sharp =
        (alpha * alpha / (sigma_m * (sigma_m * sigma_m + alpha * alpha))).sqrt() * root_moment;
    Ok(TikhonovBound {
        noise_term,
        reg_term,
        reg_term_sharp,
        total: noise_term + reg_term,
        total_sharp: noise_term + reg_term_sharp,
    })
}

/// The α equating the two bound terms: σ_m · δ / √E|y|².
pub fn balance_alpha(map: &LinearForwardMap, data_noise: f64, data_second_moment: f64) -> f64 {
    map.sigma_min() * data_noise / data_second_moment.max(f64::MIN_POSITIVE).sqrt()
}

/// Output of the W₂-W₂ solver.
#[derive(Debug, Clone)]
pub struct TikhonovW2Solution {
    pub solution: Measure,
    pub alpha: f64,
    /// (AᵀA + α²I)⁻¹Aᵀ; equals A† at α = 0.
    pub operator: DMatrix<f64>,
    /// Present when a noise level was supplied.
    pub bound: Option<TikhonovBound>,
}

/// Minimizer of W₂²(A#ρ_u, data) + α²∫|u|²dρ_u: the pushforward of the data
/// through the Tikhonov operator. Requires full column rank (n ≥ m).
pub fn solve_w2_tikhonov(
    map: &LinearForwardMap,
    data: &Measure,
    alpha: f64,
    noise_w2: Option<f64>,
) -> Result<TikhonovW2Solution> {
    if map.nrows() < map.ncols() {
        return Err(Error::ShapeError {
            rows: map.nrows(),
            cols: map.ncols(),
            reason: "W₂ Tikhonov needs an overdetermined or square map".into(),
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "regularization weight must be nonnegative".into(),
        });
    }
    let operator = map.tikhonov_operator(alpha);
    let solution: Measure = match data {
        Measure::Particles(m) => {
            if m.dim() != map.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: map.nrows(),
                    got: m.dim(),
                });
            }
            let points = m.points() * operator.transpose();
            ParticleMeasure::new(points, m.weights().clone())?.into()
        }
        Measure::Gaussian(g) => {
            pushforward_gaussian(&operator, &DVector::zeros(map.ncols()), g)?.into()
        }
        Measure::Grid(_) => {
            return Err(Error::InvalidParameter {
                name: "data",
                reason: "W₂ Tikhonov accepts particle or Gaussian data".into(),
            })
        }
    };
    let bound = match noise_w2 {
        Some(delta) if alpha > 0.0 => Some(tikhonov_error_bound(
            map,
            alpha,
            delta,
            data.second_moment(),
        )?),
        _ => None,
    };
    Ok(TikhonovW2Solution {
        solution,
        alpha,
        operator,
        bound,
    })
}

/// Value of the regularized objective W₂²(A#candidate, data) + α²∫|u|².
pub fn regularized_w2_objective(
    map: &LinearForwardMap,
    data: &ParticleMeasure,
    alpha: f64,
    candidate: &ParticleMeasure,
) -> Result<f64> {
    let pushed = map.pushforward(candidate)?;
    let (w2, _) = wasserstein_exact(&pushed, data, 2.0)?;
    Ok(w2 * w2 + alpha * alpha * candidate.second_moment())
}

/// Both formulations of the augmented-map identity.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedObjectiveCheck {
    /// W₂²(A#candidate, data) + α²·secondMoment(candidate).
    pub lhs: f64,
    /// W₂²([A; αI]#candidate, data ⊗ δ₀).
    pub rhs: f64,
}

/// Evaluates the objective in its plain and stacked forms; the two agree
/// for every candidate, which is what makes the augmented map useful.
pub fn augmented_objective_check(
    map: &LinearForwardMap,
    data: &ParticleMeasure,
    alpha: f64,
    candidate: &ParticleMeasure,
) -> Result<AugmentedObjectiveCheck> {
    let lhs = regularized_w2_objective(map, data, alpha, candidate)?;

    let (n, m) = (map.nrows(), map.ncols());
    if data.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: data.dim(),
        });
    }
    // stacked candidate atoms (A u, α u) and data atoms (y, 0)
    let mut cand_pts = DMatrix::zeros(candidate.len(), n + m);
    for i in 0..candidate.len() {
        let u = candidate.point(i);
        let au = map.apply(&u);
        for k in 0..n {
            cand_pts[(i, k)] = au[k];
        }
        for k in 0..m {
            cand_pts[(i, n + k)] = alpha * u[k];
        }
    }
    let mut data_pts = DMatrix::zeros(data.len(), n + m);
    for j in 0..data.len() {
        for k in 0..n {
            data_pts[(j, k)] = data.points()[(j, k)];
        }
    }
    let stacked_cand = ParticleMeasure::new(cand_pts, candidate.weights().clone())?;
    let stacked_data = ParticleMeasure::new(data_pts, data.weights().clone())?;
    let (w2, _) = wasserstein_exact(&stacked_cand, &stacked_data, 2.0)?;
    Ok(AugmentedObjectiveCheck { lhs, rhs: w2 * w2 })
}
