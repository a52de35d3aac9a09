//! Optimal transport solvers: exact 1D quantile coupling, exact discrete
//! transport via successive shortest paths, and log-domain Sinkhorn.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{GridMeasure, ParticleMeasure};

use super::Coupling;

/// Default cap on n₁·n₂ for the exact solver.
pub const DEFAULT_PLAN_CAP: usize = 1_000_000;

/// Piecewise-linear quantile function: segments (t_lo, t_hi, x_lo, x_hi)
/// covering (0, 1), with x linear in t on each segment.
#[derive(Debug, Clone)]
struct QuantileSegments(Vec<(f64, f64, f64, f64)>);

impl QuantileSegments {
    fn from_particles(m: &ParticleMeasure) -> Result<Self> {
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: m.dim(),
            });
        }
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| m.points()[(a, 0)].partial_cmp(&m.points()[(b, 0)]).unwrap());
        let mut segs = Vec::new();
        let mut t = 0.0;
        for &i in &order {
            let w = m.weights()[i];
            if w <= 0.0 {
                continue;
            }
            let x = m.points()[(i, 0)];
            segs.push((t, t + w, x, x));
            t += w;
        }
        Ok(Self(segs))
    }

    fn from_grid(g: &GridMeasure) -> Result<Self> {
        if g.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: g.dim(),
            });
        }
        let h = g.spacing()[0];
        let mut segs = Vec::new();
        let mut t = 0.0;
        for (i, &rho) in g.density().iter().enumerate() {
            let mass = rho * h;
            if mass <= 0.0 {
                continue;
            }
            let x_lo = g.lower()[0] + i as f64 * h;
            segs.push((t, t + mass, x_lo, x_lo + h));
            t += mass;
        }
        Ok(Self(segs))
    }

    fn value(&self, seg: usize, t: f64) -> f64 {
        let (t0, t1, x0, x1) = self.0[seg];
        if t1 <= t0 {
            return x0;
        }
        x0 + (x1 - x0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    }
}

/// ∫ |a + b·s|^p ds over [0, len], exact antiderivative.
fn abs_linear_power_integral(a: f64, b: f64, len: f64, p: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if b.abs() < 1e-300 {
        return a.abs().powf(p) * len;
    }
    let anti = |s: f64| {
        let v: f64 = a + b * s;
        v.signum() * v.abs().powf(p + 1.0) / ((p + 1.0) * b)
    };
    anti(len) - anti(0.0)
}

/// p-Wasserstein distance between one-dimensional measures via the monotone
/// (quantile) coupling, exact for particle and grid carriers alike.
pub fn wasserstein_1d(mu: &Quantile1d, nu: &Quantile1d, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: "transport exponent must be at least 1".into(),
        });
    }
    let qa = mu.segments()?;
    let qb = nu.segments()?;
    let (sa, sb) = (&qa.0, &qb.0);
    let mut total = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut t = 0.0f64;
    while ia < sa.len() && ib < sb.len() {
        let hi = sa[ia].1.min(sb[ib].1);
        if hi > t {
            let xa0 = qa.value(ia, t);
            let xa1 = qa.value(ia, hi);
            let xb0 = qb.value(ib, t);
            let xb1 = qb.value(ib, hi);
            let len = hi - t;
            // difference of the two quantiles is linear on [t, hi]
            let a = xa0 - xb0;
            let b = ((xa1 - xb1) - a) / len;
            total += abs_linear_power_integral(a, b, len, p);
            t = hi;
        }
        if sa[ia].1 <= t + 1e-18 {
            ia += 1;
        }
        if ib < sb.len() && sb[ib].1 <= t + 1e-18 {
            ib += 1;
        }
    }
    Ok(total.max(0.0).powf(1.0 / p))
}

/// One-dimensional carrier accepted by [`wasserstein_1d`].
#[derive(Debug, Clone)]
pub enum Quantile1d {
    Particles(ParticleMeasure),
    Grid(GridMeasure),
}

impl Quantile1d {
    fn segments(&self) -> Result<QuantileSegments> {
        match self {
            Quantile1d::Particles(m) => QuantileSegments::from_particles(m),
            Quantile1d::Grid(g) => QuantileSegments::from_grid(g),
        }
    }
}

impl From<ParticleMeasure> for Quantile1d {
    fn from(m: ParticleMeasure) -> Self {
        Quantile1d::Particles(m)
    }
}

impl From<GridMeasure> for Quantile1d {
    fn from(g: GridMeasure) -> Self {
        Quantile1d::Grid(g)
    }
}

impl From<&ParticleMeasure> for Quantile1d {
    fn from(m: &ParticleMeasure) -> Self {
        Quantile1d::Particles(m.clone())
    }
}

impl From<&GridMeasure> for Quantile1d {
    fn from(g: &GridMeasure) -> Self {
        Quantile1d::Grid(g.clone())
    }
}

/// Exact discrete W_p via min-cost flow (successive shortest augmenting
/// paths with node potentials) on the dense cost matrix |xᵢ − yⱼ|^p.
///
/// Returns the distance and the optimal plan. Optimality is certified by
/// the dual feasibility / zero-gap check before returning.
pub fn wasserstein_exact(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    p: f64,
) -> Result<(f64, Coupling)> {
    wasserstein_exact_capped(mu, nu, p, DEFAULT_PLAN_CAP)
}

/// [`wasserstein_exact`] with an explicit plan-size cap.
pub fn wasserstein_exact_capped(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    p: f64,
    cap: usize,
) -> Result<(f64, Coupling)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: "transport exponent must be at least 1".into(),
        });
    }
    let (n1, n2) = (mu.len(), nu.len());
    let entries = n1 * n2;
    if entries > cap {
        return Err(Error::SizeCap { entries, cap });
    }

    let cost = cost_matrix(mu, nu, p);
    let plan = min_cost_transport(mu.weights().as_slice(), nu.weights().as_slice(), &cost)?;
    let total_cost: f64 = plan
        .iter()
        .zip(cost.iter())
        .map(|(&f, &c)| f * c)
        .sum();
    Ok((
        total_cost.max(0.0).powf(1.0 / p),
        Coupling {
            plan,
            cost: total_cost,
        },
    ))
}

fn cost_matrix(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> DMatrix<f64> {
    let (n1, n2) = (mu.len(), nu.len());
    let mut c = DMatrix::zeros(n1, n2);
    for i in 0..n1 {
        for j in 0..n2 {
            let d = (mu.points().row(i) - nu.points().row(j)).norm();
            c[(i, j)] = d.powf(p);
        }
    }
    c
}

/// Dense transportation problem by successive shortest paths.
fn min_cost_transport(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const MASS_EPS: f64 = 1e-15;
    let (n1, n2) = (supply.len(), demand.len());
    let n = n1 + n2; // suppliers then consumers
    let mut plan = DMatrix::<f64>::zeros(n1, n2);
    let mut rs: Vec<f64> = supply.to_vec();
    let mut rd: Vec<f64> = demand.to_vec();
    let mut pot = vec![0.0f64; n];
    let guard = 64 * (n + 2) * (64 - (n as u64).leading_zeros() as usize + 1);

    let mut remaining: f64 = rs.iter().sum();
    let mut iterations = 0usize;
    while remaining > MASS_EPS {
        iterations += 1;
        if iterations > guard {
            return Err(Error::InvalidParameter {
                name: "transport",
                reason: "augmentation guard exceeded".into(),
            });
        }
        // Dijkstra from all suppliers with remaining supply
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut done = vec![false; n];
        for i in 0..n1 {
            if rs[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best_d {
                    best = v;
                    best_d = dist[v];
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= n1 && rd[best - n1] > MASS_EPS {
                target = best;
                break;
            }
            if best < n1 {
                // forward arcs supplier -> consumer
                let i = best;
                for j in 0..n2 {
                    let v = n1 + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[(i, j)] + pot[i] - pot[v]).max(0.0);
                    if dist[i] + rc < dist[v] {
                        dist[v] = dist[i] + rc;
                        parent[v] = i;
                    }
                }
            } else {
                // backward arcs consumer -> supplier where flow is positive
                let j = best - n1;
                for i in 0..n1 {
                    if done[i] || plan[(i, j)] <= MASS_EPS {
                        continue;
                    }
                    let rc = (-cost[(i, j)] + pot[n1 + j] - pot[i]).max(0.0);
                    if dist[n1 + j] + rc < dist[i] {
                        dist[i] = dist[n1 + j] + rc;
                        parent[i] = n1 + j;
                    }
                }
            }
        }
        if target == usize::MAX {
            return Err(Error::InvalidParameter {
                name: "transport",
                reason: "no augmenting path; marginals may not balance".into(),
            });
        }
        // bottleneck along the path
        let mut bottleneck = rd[target - n1];
        let mut v = target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u >= n1 {
                // backward arc: limited by existing flow plan[(v, u - n1)]
                bottleneck = bottleneck.min(plan[(v, u - n1)]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(rs[v]);
        // augment
        let source = v;
        let mut v = target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < n1 {
                plan[(u, v - n1)] += bottleneck;
            } else {
                plan[(v, u - n1)] -= bottleneck;
                if plan[(v, u - n1)] < MASS_EPS {
                    plan[(v, u - n1)] = 0.0;
                }
            }
            v = u;
        }
        rs[source] -= bottleneck;
        rd[target - n1] -= bottleneck;
        if rs[source] < MASS_EPS {
            rs[source] = 0.0;
        }
        if rd[target - n1] < MASS_EPS {
            rd[target - n1] = 0.0;
        }
        remaining -= bottleneck;
        // potential update keeps reduced costs nonnegative
        let dt = dist[target];
        for x in 0..n {
            if dist[x] < f64::INFINITY {
                pot[x] += dist[x].min(dt);
            } else {
                pot[x] += dt;
            }
        }
    }

    certify_optimal(supply, demand, cost, &plan, &pot)?;
    Ok(plan)
}

/// Complementary-slackness certificate from the SSP node potentials:
/// duals u_i + v_j ≤ c_ij everywhere and zero primal-dual gap (up to
/// roundoff), which together prove optimality of the returned plan.
fn certify_optimal(
    supply: &[f64],
    demand: &[f64],
    cost: &DMatrix<f64>,
    plan: &DMatrix<f64>,
    pot: &[f64],
) -> Result<()> {
    let (n1, n2) = (supply.len(), demand.len());
    let scale = 1.0 + cost.abs().max();
    let tol = 1e-9 * scale;

    // the final potentials are feasible duals: u_i = -pot_i, v_j = pot_{n1+j}
    let u: Vec<f64> = (0..n1).map(|i| -pot[i]).collect();
    let v: Vec<f64> = (0..n2).map(|j| pot[n1 + j]).collect();
    let mut primal = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            primal += plan[(i, j)] * cost[(i, j)];
            if u[i] + v[j] > cost[(i, j)] + tol {
                return Err(Error::InvalidParameter {
                    name: "transport",
                    reason: "dual feasibility violated; solver bug".into(),
                });
            }
        }
    }
    let dual: f64 = supply.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
        + demand.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    if (primal - dual).abs() > tol * (1.0 + primal.abs()) {
        return Err(Error::InvalidParameter {
            name: "transport",
            reason: format!("primal-dual gap {:.3e}; solver bug", primal - dual),
        });
    }
    Ok(())
}

/// Result of a Sinkhorn run.
#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    /// (Σ plan·cost)^(1/p).
    pub value: f64,
    /// Raw transport cost Σ plan·cost of the entropic plan.
    pub transport_cost: f64,
    pub coupling: Coupling,
    pub iterations: usize,
    /// False when the marginal tolerance was not reached within max_iter;
    /// the best iterate is still returned.
    pub converged: bool,
}

/// Entropic-regularized transport in the log domain.
///
/// Stops when the L¹ marginal violation drops below `tol`.
pub fn sinkhorn(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    p: f64,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "entropic regularization must be positive".into(),
        });
    }
    let (n1, n2) = (mu.len(), nu.len());
    let cost = cost_matrix(mu, nu, p);
    let log_a: Vec<f64> = mu.weights().iter().map(|&w| safe_ln(w)).collect();
    let log_b: Vec<f64> = nu.weights().iter().map(|&w| safe_ln(w)).collect();
    let mut f = vec![0.0f64; n1];
    let mut g = vec![0.0f64; n2];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // row scaling: makes row marginals exact
        for i in 0..n1 {
            let mut row = Vec::with_capacity(n2);
            for j in 0..n2 {
                row.push((g[j] - cost[(i, j)]) / epsilon);
            }
            f[i] = if log_a[i].is_infinite() {
                f64::NEG_INFINITY
            } else {
                epsilon * (log_a[i] - log_sum_exp(&row))
            };
        }
        // column violation before the column scaling
        let mut violation = 0.0;
        let mut col_log_sums = Vec::with_capacity(n2);
        for j in 0..n2 {
            let mut col = Vec::with_capacity(n1);
            for i in 0..n1 {
                col.push((f[i] + g[j] - cost[(i, j)]) / epsilon);
            }
            let ls = log_sum_exp(&col);
            col_log_sums.push(ls);
            violation += (ls.exp() - nu.weights()[j]).abs();
        }
        if violation <= tol {
            converged = true;
            break;
        }
        for j in 0..n2 {
            g[j] = if log_b[j].is_infinite() {
                f64::NEG_INFINITY
            } else {
                g[j] + epsilon * (log_b[j] - col_log_sums[j])
            };
        }
    }

    let mut plan = DMatrix::zeros(n1, n2);
    let mut transport_cost = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let lp = (f[i] + g[j] - cost[(i, j)]) / epsilon;
            let mass = lp.exp();
            plan[(i, j)] = mass;
            transport_cost += mass * cost[(i, j)];
        }
    }
    Ok(SinkhornOutcome {
        value: transport_cost.max(0.0).powf(1.0 / p),
        transport_cost,
        coupling: Coupling {
            plan,
            cost: transport_cost,
        },
        iterations,
        converged,
    })
}

fn safe_ln(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn atoms(xs: &[f64]) -> ParticleMeasure {
        let ws = vec![1.0; xs.len()];
        ParticleMeasure::from_points_1d(xs, &ws).unwrap()
    }

    #[test]
    fn single_dirac_transport() {
        let mu = atoms(&[0.0]);
        let nu = atoms(&[3.0]);
        let d = wasserstein_1d(&(&mu).into(), &(&nu).into(), 2.0).unwrap();
        assert_relative_eq!(d, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn translated_gaussians_on_grid() {
        let mu = GridMeasure::from_fn_1d(-8.0, 10.0, 4000, |x| (-(x * x) / 2.0).exp()).unwrap();
        let nu = GridMeasure::from_fn_1d(-8.0, 10.0, 4000, |x| (-((x - 2.0) * (x - 2.0)) / 2.0).exp()).unwrap();
        let d = wasserstein_1d(&(&mu).into(), &(&nu).into(), 2.0).unwrap();
        assert!((d - 2.0).abs() < 1e-3, "translation distance {d}");
    }

    #[test]
    fn two_atom_monotone_matching() {
        // μ = {0, 1}, ν = {2, 3}: monotone matching costs √(2²+2²)/√2... p=2 gives 2.
        let mu = atoms(&[0.0, 1.0]);
        let nu = atoms(&[2.0, 3.0]);
        let d = wasserstein_1d(&(&mu).into(), &(&nu).into(), 2.0).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_solver_identical_measures() {
        let mu = atoms(&[0.2, 1.4, -0.7]);
        let (d, c) = wasserstein_exact(&mu, &mu, 2.0).unwrap();
        assert!(d.abs() < 1e-12);
        // diagonal-supported plan
        for i in 0..3 {
            assert_relative_eq!(c.plan[(i, i)], 1.0 / 3.0, epsilon = 1e-12);
        }
        let (rv, cv) = c.marginal_violation(&mu, &mu);
        assert!(rv < 1e-12 && cv < 1e-12);
    }

    #[test]
    fn exact_solver_matches_quantile_coupling() {
        let mu = atoms(&[0.0, 0.5, 2.0, -1.0]);
        let nu = ParticleMeasure::from_points_1d(&[1.0, -0.5, 0.25], &[0.2, 0.5, 0.3]).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let (d, _) = wasserstein_exact(&mu, &nu, p).unwrap();
            let q = wasserstein_1d(&(&mu).into(), &(&nu).into(), p).unwrap();
            assert_relative_eq!(d, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_solver_size_cap() {
        let mu = atoms(&[0.0, 1.0]);
        let nu = atoms(&[2.0, 3.0]);
        let err = wasserstein_exact_capped(&mu, &nu, 2.0, 3).unwrap_err();
        assert!(matches!(err, Error::SizeCap { entries: 4, cap: 3 }));
    }

    #[test]
    fn sinkhorn_identical_measures_entropy_envelope() {
        let mu = atoms(&[0.0, 1.0, 2.0, 3.5, -1.0]);
        for eps in [1.0, 0.1, 0.01] {
            let out = sinkhorn(&mu, &mu, 2.0, eps, 20_000, 1e-10).unwrap();
            assert!(out.converged);
            let envelope = eps * (mu.len() as f64).ln();
            assert!(
                out.transport_cost <= envelope + 1e-9,
                "cost {} above envelope {envelope}",
                out.transport_cost
            );
            // plan concentrates near the diagonal
            let diag: f64 = (0..mu.len()).map(|i| out.coupling.plan[(i, i)]).sum();
            assert!(diag > 0.5, "diagonal mass {diag}");
        }
    }

    #[test]
    fn sinkhorn_close_to_exact_at_small_epsilon() {
        let mu = atoms(&[0.0, 0.3, 0.9, 1.4, 2.2, 2.9, 3.3, 4.0, 4.8, 5.5]);
        let nu = atoms(&[0.1, 0.5, 1.1, 1.6, 2.0, 3.0, 3.6, 4.2, 5.0, 5.9]);
        let (exact, _) = wasserstein_exact(&mu, &nu, 2.0).unwrap();
        let out = sinkhorn(&mu, &nu, 2.0, 0.01, 5_000, 1e-4).unwrap();
        let (rv, cv) = out.coupling.marginal_violation(&mu, &nu);
        assert!(rv + cv < 1e-3, "marginal violation {rv} + {cv}");
        assert!(
            (out.value - exact).abs() / exact < 0.02,
            "sinkhorn {} vs exact {exact}",
            out.value
        );
    }

    #[test]
    fn sinkhorn_monotone_approach_to_exact() {
        let mu = atoms(&[0.0, 1.0, 2.5, 4.0]);
        let nu = atoms(&[0.5, 1.8, 2.9, 4.4]);
        let (exact, _) = wasserstein_exact(&mu, &nu, 2.0).unwrap();
        let mut last_gap = f64::INFINITY;
        for eps in [1.0, 0.1, 0.01] {
            let out = sinkhorn(&mu, &nu, 2.0, eps, 100_000, 1e-7).unwrap();
            let gap = (out.value - exact).abs();
            assert!(gap <= last_gap + 1e-9, "gap grew at eps {eps}");
            last_gap = gap;
        }
        assert!(last_gap / exact < 0.02, "final gap {last_gap}");
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mu = atoms(&[0.0, 10.0]);
        let nu = atoms(&[5.0, 15.0]);
        let out = sinkhorn(&mu, &nu, 2.0, 0.001, 3, 1e-14).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn exact_solver_2d() {
        let pts_mu = nalgebra::DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let pts_nu = nalgebra::DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 3.0, 0.0, 2.0, 1.0]);
        let mu = ParticleMeasure::uniform(pts_mu).unwrap();
        let nu = ParticleMeasure::uniform(pts_nu).unwrap();
        let (d, c) = wasserstein_exact(&mu, &nu, 2.0).unwrap();
        // identity-order matching is optimal here: each atom moves by (2, 0)
        assert_relative_eq!(d, 2.0, epsilon = 1e-9);
        let (rv, cv) = c.marginal_violation(&mu, &nu);
        assert!(rv < 1e-10 && cv < 1e-10);
    }
}
