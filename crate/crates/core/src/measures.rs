//! Probability-measure carriers: weighted particle clouds, densities on
//! rectangular grids, and Gaussians.
//!
//! Every carrier is immutable after construction and normalized to unit mass.
//! Gaussians additionally expose the closed forms (moments, conditionals,
//! marginals, log-concavity constant) that serve as oracles for the solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Particle weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Grid cell masses must sum to one within this tolerance.
pub const GRID_MASS_TOL: f64 = 1e-10;
/// Covariance symmetry tolerance.
pub const COV_SYM_TOL: f64 = 1e-12;
/// Subspace basis orthonormality tolerance.
pub const BASIS_ORTHO_TOL: f64 = 1e-10;

/// Weighted point cloud representing an empirical probability measure in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    points: DMatrix<f64>,
    weights: DVector<f64>,
}

impl ParticleMeasure {
    /// Build from an n×d location matrix and n weights already summing to one.
    pub fn new(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidMeasure("need at least one atom".into()));
        }
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom location".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = linalg::compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Build from raw nonnegative masses, rescaling them to sum to one.
    pub fn normalized(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = linalg::compensated_sum(weights.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroMass { mass: total });
        }
        Self::new(points, weights / total)
    }

    /// Uniform weights over the given locations.
    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let n = points.nrows();
        let w = DVector::from_element(n, 1.0 / n as f64);
        Self::new(points, w)
    }

    /// One-dimensional cloud from positions and raw masses.
    pub fn from_points_1d(xs: &[f64], ws: &[f64]) -> Result<Self> {
        let points = DMatrix::from_iterator(xs.len(), 1, xs.iter().copied());
        Self::normalized(points, DVector::from_row_slice(ws))
    }

    /// Single atom at `x` with full mass.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        let points = DMatrix::from_row_slice(1, x.len(), x);
        Self::new(points, DVector::from_element(1, 1.0))
    }

    /// Rescale weights to sum to one; geometry unchanged.
    pub fn normalize(&self) -> Result<Self> {
        Self::normalized(self.points.clone(), self.weights.clone())
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one atom by construction
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Location of atom `i` as an owned vector.
    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    /// ∫ |x|² dm.
    pub fn second_moment(&self) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * self.points.row(i).norm_squared())
            .sum()
    }

    /// Weighted mean vector.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for i in 0..self.len() {
            m += self.weights[i] * self.point(i);
        }
        m
    }

    /// Gaussian-kernel density estimate Σᵢ wᵢ φ_h(query − xᵢ)
    /// with a single isotropic bandwidth.
    pub fn kde_density(&self, query: &DVector<f64>, bandwidth: f64) -> Result<f64> {
        let h = vec![bandwidth; self.dim()];
        self.kde_density_axes(query, &h)
    }

    /// KDE with one bandwidth per axis (product Gaussian kernel).
    pub fn kde_density_axes(&self, query: &DVector<f64>, bandwidth: &[f64]) -> Result<f64> {
        self.check_bandwidth(query, bandwidth)?;
        let log_norm: f64 = bandwidth
            .iter()
            .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
            .sum();
        let mut total = 0.0;
        for i in 0..self.len() {
            let mut q = 0.0;
            for (j, h) in bandwidth.iter().enumerate() {
                let z = (query[j] - self.points[(i, j)]) / h;
                q += z * z;
            }
            total += self.weights[i] * (log_norm - 0.5 * q).exp();
        }
        Ok(total)
    }

    /// Gradient of the KDE in the query point.
    pub fn kde_gradient_axes(
        &self,
        query: &DVector<f64>,
        bandwidth: &[f64],
    ) -> Result<DVector<f64>> {
        self.check_bandwidth(query, bandwidth)?;
        let log_norm: f64 = bandwidth
            .iter()
            .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
            .sum();
        let mut grad = DVector::zeros(self.dim());
        for i in 0..self.len() {
            let mut q = 0.0;
            for (j, h) in bandwidth.iter().enumerate() {
                let z = (query[j] - self.points[(i, j)]) / h;
                q += z * z;
            }
            let k = self.weights[i] * (log_norm - 0.5 * q).exp();
            for (j, h) in bandwidth.iter().enumerate() {
                grad[j] += -k * (query[j] - self.points[(i, j)]) / (h * h);
            }
        }
        Ok(grad)
    }

    fn check_bandwidth(&self, query: &DVector<f64>, bandwidth: &[f64]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        if bandwidth.len() != self.dim() || bandwidth.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: "one positive bandwidth per axis required".into(),
            });
        }
        Ok(())
    }

    /// Silverman's rule-of-thumb bandwidth per axis,
    /// h_j = σ_j (4 / ((d+2) n_eff))^(1/(d+4)) with Kish effective sample size.
    pub fn silverman_bandwidths(&self) -> Result<Vec<f64>> {
        let d = self.dim() as f64;
        let n_eff = 1.0 / self.weights.iter().map(|w| w * w).sum::<f64>();
        if self.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: "Silverman's rule needs at least two atoms".into(),
            });
        }
        let mean = self.mean();
        let mut out = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let var: f64 = (0..self.len())
                .map(|i| {
                    let dx = self.points[(i, j)] - mean[j];
                    self.weights[i] * dx * dx
                })
                .sum();
            let sigma = var.sqrt();
            if !(sigma > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "bandwidth",
                    reason: format!("axis {j} has zero spread; supply a bandwidth"),
                });
            }
            out.push(sigma * (4.0 / ((d + 2.0) * n_eff)).powf(1.0 / (d + 4.0)));
        }
        Ok(out)
    }
}

/// Density values on a regular rectangular grid, cell-centered,
/// with cell masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    lower: Vec<f64>,
    upper: Vec<f64>,
    shape: Vec<usize>,
    density: Vec<f64>,
}

impl GridMeasure {
    /// Build from an already-normalized row-major density array.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, density: Vec<f64>) -> Result<Self> {
        let d = lower.len();
        if upper.len() != d || shape.len() != d || d == 0 {
            return Err(Error::InvalidMeasure("lower/upper/shape lengths differ".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(Error::InvalidMeasure("upper must exceed lower componentwise".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidMeasure("grid shape must be positive".into()));
        }
        let n: usize = shape.iter().product();
        if density.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: density.len(),
            });
        }
        if density.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidMeasure("density must be finite and nonnegative".into()));
        }
        let g = Self {
            lower,
            upper,
            shape,
            density,
        };
        let mass = g.total_mass();
        if (mass - 1.0).abs() > GRID_MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "grid mass is {mass}, expected 1"
            )));
        }
        Ok(g)
    }

    /// Build from raw nonnegative density values, rescaling to unit mass.
    pub fn normalized(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, density: Vec<f64>) -> Result<Self> {
        if density.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidMeasure("density must be finite and nonnegative".into()));
        }
        let d = lower.len();
        if upper.len() != d || shape.len() != d || d == 0 {
            return Err(Error::InvalidMeasure("lower/upper/shape lengths differ".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(Error::InvalidMeasure("upper must exceed lower componentwise".into()));
        }
        let vol: f64 = lower
            .iter()
            .zip(&upper)
            .zip(&shape)
            .map(|((l, u), &s)| (u - l) / s as f64)
            .product();
        let mass: f64 = linalg::compensated_sum(density.iter().copied()) * vol;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::ZeroMass { mass });
        }
        let density = density.into_iter().map(|v| v / mass).collect();
        Self::new(lower, upper, shape, density)
    }

    /// Discretize a density function by midpoint sampling, then normalize.
    pub fn from_fn<F>(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let n: usize = shape.iter().product();
        let d = lower.len();
        let h: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .zip(&shape)
            .map(|((l, u), &s)| (u - l) / s as f64)
            .collect();
        let mut density = Vec::with_capacity(n);
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        for _ in 0..n {
            for k in 0..d {
                x[k] = lower[k] + (idx[k] as f64 + 0.5) * h[k];
            }
            density.push(f(&x));
            // advance row-major multi-index
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::normalized(lower, upper, shape, density)
    }

    /// Uniform 1D grid helper.
    pub fn from_fn_1d<F>(lower: f64, upper: f64, cells: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        Self::from_fn(vec![lower], vec![upper], vec![cells], |x| f(x[0]))
    }

    /// Rescale density to unit mass; geometry unchanged.
    pub fn normalize(&self) -> Result<Self> {
        Self::normalized(
            self.lower.clone(),
            self.upper.clone(),
            self.shape.clone(),
            self.density.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn n_cells(&self) -> usize {
        self.density.len()
    }

    /// Cell spacing per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(&self.shape)
            .map(|((l, u), &s)| (u - l) / s as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn total_mass(&self) -> f64 {
        linalg::compensated_sum(self.density.iter().copied()) * self.cell_volume()
    }

    /// Whether another grid shares this grid's geometry exactly.
    pub fn same_geometry(&self, other: &GridMeasure) -> bool {
        self.lower == other.lower && self.upper == other.upper && self.shape == other.shape
    }

    /// Center coordinates of the cell at a row-major flat index.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut rem = flat;
        let mut center = vec![0.0; self.dim()];
        for k in (0..self.dim()).rev() {
            let i = rem % self.shape[k];
            rem /= self.shape[k];
            center[k] = self.lower[k] + (i as f64 + 0.5) * h[k];
        }
        center
    }

    /// Density at an arbitrary point by multilinear interpolation of
    /// cell-center values; zero outside the grid box.
    pub fn density_at(&self, point: &[f64]) -> f64 {
        let d = self.dim();
        if point.len() != d {
            return 0.0;
        }
        let h = self.spacing();
        let outside = point
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .any(|((p, l), u)| p < l || p > u);
        if outside {
            return 0.0;
        }
        // position in center-grid coordinates, clamped to the center hull
        let mut i0 = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let t = (point[k] - self.lower[k]) / h[k] - 0.5;
            let tc = t.clamp(0.0, (self.shape[k] - 1) as f64);
            let base = tc.floor().min((self.shape[k] - 1) as f64 - 1.0).max(0.0);
            i0[k] = base as usize;
            frac[k] = if self.shape[k] == 1 { 0.0 } else { (tc - base).clamp(0.0, 1.0) };
        }
        let mut value = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                let idx = if up { (i0[k] + 1).min(self.shape[k] - 1) } else { i0[k] };
                w *= if up { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.shape[k] + idx;
            }
            if w != 0.0 {
                value += w * self.density[flat];
            }
        }
        value
    }

    /// ∫ |x|² dm by midpoint quadrature.
    pub fn second_moment(&self) -> f64 {
        let vol = self.cell_volume();
        (0..self.n_cells())
            .map(|i| {
                let c = self.cell_center(i);
                self.density[i] * vol * c.iter().map(|x| x * x).sum::<f64>()
            })
            .sum()
    }
}

/// Mean vector plus symmetric positive definite covariance.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > COV_SYM_TOL * (1.0 + cov.abs().max()) {
            return Err(Error::InvalidMeasure(format!(
                "covariance asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        let cov = linalg::symmetrize(&cov);
        let min_eig = linalg::min_eigenvalue(&cov);
        if !(min_eig > 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "covariance min eigenvalue {min_eig:.3e} is not positive"
            )));
        }
        let precision = linalg::spd_inverse(&cov);
        let log_norm =
            -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + linalg::spd_log_det(&cov));
        Ok(Self {
            mean,
            cov,
            precision,
            log_norm,
        })
    }

    /// 1D Gaussian from mean and variance.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, variance),
        )
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// |mean|² + tr(cov).
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.cov.trace()
    }

    pub fn density(&self, y: &DVector<f64>) -> f64 {
        self.log_density(y).exp()
    }

    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let r = y - &self.mean;
        self.log_norm - 0.5 * (&self.precision * &r).dot(&r)
    }

    /// ∇ log ρ(y) = −Σ⁻¹(y − m).
    pub fn grad_log_density(&self, y: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * (y - &self.mean))
    }

    /// ∇ ρ(y) = ρ(y) ∇ log ρ(y).
    pub fn grad_density(&self, y: &DVector<f64>) -> DVector<f64> {
        self.grad_log_density(y) * self.density(y)
    }

    /// The λ with −∇² log ρ ⪰ λ Id; for a Gaussian, 1 / λ_max(cov).
    pub fn log_concavity(&self) -> LogConcavityCertificate {
        LogConcavityCertificate {
            lambda: 1.0 / linalg::max_eigenvalue(&self.cov),
        }
    }

    /// The Gaussian proportional to z ↦ density(basis · z), i.e. the
    /// distribution restricted to the subspace spanned by the (orthonormal)
    /// basis columns and renormalized. Obtained by completing the square.
    pub fn conditional_on_subspace(&self, basis: &DMatrix<f64>) -> Result<GaussianMeasure> {
        check_orthonormal(basis, self.dim())?;
        let btp = basis.transpose() * &self.precision;
        let lambda_z = &btp * basis; // restricted precision
        let cov_z = linalg::symmetrize(&lambda_z);
        if linalg::min_eigenvalue(&cov_z) <= 0.0 {
            return Err(Error::DegenerateRestriction);
        }
        let cov_z = linalg::spd_inverse(&cov_z);
        let mean_z = &cov_z * (btp * &self.mean);
        GaussianMeasure::new(mean_z, cov_z)
    }

    /// Pushforward under z = basisᵀ y: the marginal on the subspace.
    pub fn marginal_on_subspace(&self, basis: &DMatrix<f64>) -> Result<GaussianMeasure> {
        check_orthonormal(basis, self.dim())?;
        let mean_z = basis.transpose() * &self.mean;
        let cov_z = basis.transpose() * &self.cov * basis;
        GaussianMeasure::new(mean_z, cov_z)
    }

    /// Draw `n` samples as a uniformly-weighted particle cloud.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ParticleMeasure> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "need at least one sample".into(),
            });
        }
        let l = linalg::cholesky_lower(&self.cov).ok_or_else(|| {
            Error::InvalidMeasure("covariance lost positive definiteness".into())
        })?;
        let d = self.dim();
        let mut points = DMatrix::zeros(n, d);
        for i in 0..n {
            let z = DVector::from_iterator(d, (0..d).map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v
            }));
            let x = &self.mean + &l * z;
            points.row_mut(i).copy_from(&x.transpose());
        }
        ParticleMeasure::uniform(points)
    }

    /// Discretize onto a grid by midpoint sampling of the density.
    pub fn to_grid(&self, lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<GridMeasure> {
        GridMeasure::from_fn(lower, upper, shape, |x| {
            self.density(&DVector::from_row_slice(x))
        })
    }
}

fn check_orthonormal(basis: &DMatrix<f64>, ambient: usize) -> Result<()> {
    if basis.nrows() != ambient {
        return Err(Error::DimensionMismatch {
            expected: ambient,
            got: basis.nrows(),
        });
    }
    let gram = basis.transpose() * basis;
    let dev = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).abs().max();
    if dev > BASIS_ORTHO_TOL {
        return Err(Error::InvalidParameter {
            name: "basis",
            reason: format!("columns not orthonormal (deviation {dev:.3e})"),
        });
    }
    Ok(())
}

/// Certificate that −∇² log ρ ⪰ λ Id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogConcavityCertificate {
    pub lambda: f64,
}

/// Any of the three measure carriers.
#[derive(Debug, Clone)]
pub enum Measure {
    Particles(ParticleMeasure),
    Grid(GridMeasure),
    Gaussian(GaussianMeasure),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Particles(m) => m.dim(),
            Measure::Grid(m) => m.dim(),
            Measure::Gaussian(m) => m.dim(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Measure::Particles(m) => m.second_moment(),
            Measure::Grid(m) => m.second_moment(),
            Measure::Gaussian(m) => m.second_moment(),
        }
    }

    pub fn as_particles(&self) -> Option<&ParticleMeasure> {
        match self {
            Measure::Particles(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridMeasure> {
        match self {
            Measure::Grid(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianMeasure> {
        match self {
            Measure::Gaussian(m) => Some(m),
            _ => None,
        }
    }
}

impl From<ParticleMeasure> for Measure {
    fn from(m: ParticleMeasure) -> Self {
        Measure::Particles(m)
    }
}

impl From<GridMeasure> for Measure {
    fn from(m: GridMeasure) -> Self {
        Measure::Grid(m)
    }
}

impl From<GaussianMeasure> for Measure {
    fn from(m: GaussianMeasure) -> Self {
        Measure::Gaussian(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_rescales_uniformly() {
        let m = ParticleMeasure::from_points_1d(&[0.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_relative_eq!(m.weights()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.weights()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn normalize_keeps_zero_weights() {
        let m = ParticleMeasure::from_points_1d(&[0.0, 1.0, 2.0], &[1.0, 0.0, 3.0]).unwrap();
        assert_relative_eq!(m.weights()[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(m.weights()[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.weights()[2], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        let err = ParticleMeasure::from_points_1d(&[0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroMass { .. }));
    }

    #[test]
    fn uniform_grid_density_is_one_on_unit_interval() {
        let g = GridMeasure::normalized(vec![0.0], vec![1.0], vec![10], vec![3.0; 10]).unwrap();
        for &v in g.density() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(g.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn second_moment_standard_2d() {
        let g = GaussianMeasure::standard(2);
        assert_relative_eq!(g.second_moment(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn second_moment_symmetric_pair() {
        let m = ParticleMeasure::from_points_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(m.second_moment(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn second_moment_shifted_gaussian_monte_carlo() {
        // N(2, 1) in 1D: |mean|² + trace = 5, cross-checked by Monte Carlo.
        let g = GaussianMeasure::scalar(2.0, 1.0).unwrap();
        assert_relative_eq!(g.second_moment(), 5.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = g.sample(1_000_000, &mut rng).unwrap();
        assert!((cloud.second_moment() - 5.0).abs() < 1e-2);
    }

    #[test]
    fn conditional_independent_axes() {
        let g = GaussianMeasure::standard(2);
        let basis = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = g.conditional_on_subspace(&basis).unwrap();
        assert_relative_eq!(c.mean()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov()[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conditional_correlated_instance() {
        // mean (1, 2), cov [[1, 0.5], [0.5, 1]], restricted to the x-axis:
        // complete-the-square gives N(0, 0.75).
        let g = GaussianMeasure::new(
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let basis = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = g.conditional_on_subspace(&basis).unwrap();
        assert_relative_eq!(c.mean()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov()[(0, 0)], 0.75, epsilon = 1e-12);

        // quadrature oracle: renormalize y ↦ ρ(y, 0) on a fine 1D grid and
        // compare mean and variance.
        let n = 20_000;
        let (a, b) = (-10.0f64, 10.0f64);
        let h = (b - a) / n as f64;
        let mut mass = 0.0;
        let mut mean = 0.0;
        let mut second = 0.0;
        for i in 0..n {
            let y1 = a + (i as f64 + 0.5) * h;
            let v = g.density(&DVector::from_row_slice(&[y1, 0.0])) * h;
            mass += v;
            mean += y1 * v;
            second += y1 * y1 * v;
        }
        mean /= mass;
        let var = second / mass - mean * mean;
        assert_relative_eq!(c.mean()[0], mean, epsilon = 1e-8);
        assert_relative_eq!(c.cov()[(0, 0)], var, epsilon = 1e-8);
    }

    #[test]
    fn conditional_block_diagonal_matches_marginal() {
        let g = GaussianMeasure::new(
            DVector::from_row_slice(&[3.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let basis = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = g.conditional_on_subspace(&basis).unwrap();
        let m = g.marginal_on_subspace(&basis).unwrap();
        assert_relative_eq!(c.mean()[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.mean()[0], m.mean()[0], epsilon = 1e-12);
        assert_relative_eq!(c.cov()[(0, 0)], m.cov()[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn marginal_ignores_correlation() {
        let g = GaussianMeasure::new(
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let basis = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let m = g.marginal_on_subspace(&basis).unwrap();
        assert_relative_eq!(m.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.cov()[(0, 0)], 1.0, epsilon = 1e-12);
        // the Fig.-2 discriminator: conditional mean 0 differs from marginal mean 1
        let c = g.conditional_on_subspace(&basis).unwrap();
        assert!((c.mean()[0] - m.mean()[0]).abs() > 0.9);
    }

    #[test]
    fn marginal_contracts_second_moment() {
        let g = GaussianMeasure::new(
            DVector::from_row_slice(&[1.0, -2.0, 0.5]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.0, 0.1, 0.0, 0.5]),
        )
        .unwrap();
        let basis = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let m = g.marginal_on_subspace(&basis).unwrap();
        assert!(m.second_moment() <= g.second_moment() + 1e-12);
    }

    #[test]
    fn kde_peak_value_single_particle() {
        let m = ParticleMeasure::from_points_1d(&[0.0], &[1.0]).unwrap();
        let v = m.kde_density(&DVector::from_row_slice(&[0.0]), 1.0).unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn kde_symmetric_pair() {
        let m = ParticleMeasure::from_points_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let at = |x: f64| m.kde_density(&DVector::from_row_slice(&[x]), 0.7).unwrap();
        assert_relative_eq!(at(0.3), at(-0.3), epsilon = 1e-14);
        let kernel = |x: f64| (-(x * x) / (2.0 * 0.49)).exp() / (0.7 * (2.0 * std::f64::consts::PI).sqrt());
        assert_relative_eq!(at(0.0), 0.5 * (kernel(1.0) + kernel(-1.0)), epsilon = 1e-14);
    }

    #[test]
    fn kde_monte_carlo_recovers_normal_peak() {
        let g = GaussianMeasure::scalar(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = g.sample(100_000, &mut rng).unwrap();
        let h = cloud.silverman_bandwidths().unwrap();
        let v = cloud
            .kde_density_axes(&DVector::from_row_slice(&[0.0]), &h)
            .unwrap();
        assert!((v - 0.3989).abs() < 0.02, "kde at 0 was {v}");
    }

    #[test]
    fn kde_integrates_to_one() {
        let m = ParticleMeasure::from_points_1d(&[-0.7, 0.1, 0.4], &[0.2, 0.5, 0.3]).unwrap();
        let h = 0.3;
        let n = 4000;
        let (a, b) = (-12.0, 12.0);
        let step = (b - a) / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let x = a + (i as f64 + 0.5) * step;
            mass += m.kde_density(&DVector::from_row_slice(&[x]), h).unwrap() * step;
        }
        assert!((mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn grid_interpolation_matches_midpoints() {
        let g = GridMeasure::from_fn_1d(-2.0, 2.0, 64, |x| (-x * x).exp()).unwrap();
        let c = g.cell_center(10);
        assert_relative_eq!(g.density_at(&c), g.density()[10], epsilon = 1e-12);
        assert_eq!(g.density_at(&[5.0]), 0.0);
    }

    #[test]
    fn log_concavity_from_largest_eigenvalue() {
        let g = GaussianMeasure::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_relative_eq!(g.log_concavity().lambda, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_rejects_asymmetric_cov() {
        let err = GaussianMeasure::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidMeasure(_)));
    }

    #[test]
    fn gaussian_rejects_indefinite_cov() {
        let err = GaussianMeasure::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidMeasure(_)));
    }
}
