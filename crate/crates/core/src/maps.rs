//! Forward maps and their pushforward actions.
//!
//! `LinearForwardMap` caches the SVD of a full-rank matrix together with the
//! pseudoinverse and the row-space/null-space projectors. `SmoothForwardMap`
//! wraps user-supplied evaluation/Jacobian closures, optionally with an
//! inverse (analytic or Newton-constructed).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{GaussianMeasure, ParticleMeasure};

/// Singular values below `RANK_THRESHOLD * sigma_max` are treated as zero.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// Full-rank matrix map with cached SVD, pseudoinverse, and projectors.
#[derive(Debug, Clone)]
pub struct LinearForwardMap {
    matrix: DMatrix<f64>,
    u: DMatrix<f64>,     // n × r, columns span Col(A)
    sigma: Vec<f64>,     // r singular values, descending
    v: DMatrix<f64>,     // m × r, columns span Row(A)
    pinv: DMatrix<f64>,  // m × n
    row_projector: DMatrix<f64>,
    null_projector: DMatrix<f64>,
}

impl LinearForwardMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (matrix.nrows(), matrix.ncols());
        if n == 0 || m == 0 {
            return Err(Error::ShapeError {
                rows: n,
                cols: m,
                reason: "matrix must be nonempty".into(),
            });
        }
        let svd = matrix.clone().svd(true, true);
        let u_full = svd.u.expect("svd requested u");
        let vt_full = svd.v_t.expect("svd requested v_t");
        let r = n.min(m);

        // order singular triplets descending
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(m, r);
        for (k, &i) in order.iter().take(r).enumerate() {
            u.column_mut(k).copy_from(&u_full.column(i));
            v.column_mut(k).copy_from(&vt_full.row(i).transpose());
        }

        for (i, &s) in sigma.iter().enumerate() {
            if !(s > RANK_THRESHOLD * sigma[0]) {
                return Err(Error::RankDeficient { index: i, value: s });
            }
        }

        let recon = &u * DMatrix::from_diagonal(&DVector::from_row_slice(&sigma)) * v.transpose();
        let recon_err = (&recon - &matrix).abs().max();
        if recon_err > 1e-10 * (1.0 + matrix.abs().max()) {
            return Err(Error::InvalidParameter {
                name: "matrix",
                reason: format!("SVD reconstruction error {recon_err:.3e}"),
            });
        }

        let inv_sigma = DVector::from_iterator(r, sigma.iter().map(|s| 1.0 / s));
        let pinv = &v * DMatrix::from_diagonal(&inv_sigma) * u.transpose();
        let row_projector = &pinv * &matrix; // A†A = V Vᵀ
        let null_projector = DMatrix::identity(m, m) - &row_projector;

        Ok(Self {
            matrix,
            u,
            sigma,
            v,
            pinv,
            row_projector,
            null_projector,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(DMatrix::from_row_slice(n, m, &flat))
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is full rank")
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Orthonormal basis of Col(A), n × r.
    pub fn column_space_basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Orthonormal basis of Row(A), m × r.
    pub fn row_space_basis(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma[self.sigma.len() - 1]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    /// Moore–Penrose inverse A† = V diag(1/σ) Uᵀ.
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// (rowSpace, nullSpace) orthogonal projectors on the domain.
    pub fn projectors(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.row_projector, &self.null_projector)
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    /// Map every atom through A; weights unchanged.
    pub fn pushforward(&self, m: &ParticleMeasure) -> Result<ParticleMeasure> {
        if m.dim() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                got: m.dim(),
            });
        }
        let mapped = m.points() * self.matrix.transpose();
        ParticleMeasure::new(mapped, m.weights().clone())
    }

    /// Stacked map [A; αI], whose σ_min² = σ_min(A)² + α².
    pub fn augmented(&self, alpha: f64) -> Result<LinearForwardMap> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "augmentation needs alpha > 0".into(),
            });
        }
        let (n, m) = (self.nrows(), self.ncols());
        let mut stacked = DMatrix::zeros(n + m, m);
        stacked.view_mut((0, 0), (n, m)).copy_from(&self.matrix);
        for i in 0..m {
            stacked[(n + i, i)] = alpha;
        }
        Self::new(stacked)
    }

    /// (AᵀA + α²I)⁻¹Aᵀ = V diag(σ/(σ²+α²)) Uᵀ; reduces to A† at α = 0.
    pub fn tikhonov_operator(&self, alpha: f64) -> DMatrix<f64> {
        let r = self.rank();
        let gains = DVector::from_iterator(
            r,
            self.sigma.iter().map(|&s| s / (s * s + alpha * alpha)),
        );
        &self.v * DMatrix::from_diagonal(&gains) * self.u.transpose()
    }

    /// Spectral norm of the Tikhonov operator: max σ/(σ²+α²).
    pub fn tikhonov_operator_norm(&self, alpha: f64) -> f64 {
        self.sigma
            .iter()
            .map(|&s| s / (s * s + alpha * alpha))
            .fold(0.0, f64::max)
    }
}

/// Affine image of a Gaussian: mean ↦ M·mean + shift, cov ↦ M·cov·Mᵀ.
///
/// Rejects images whose covariance leaves the positive definite cone.
pub fn pushforward_gaussian(
    matrix: &DMatrix<f64>,
    shift: &DVector<f64>,
    g: &GaussianMeasure,
) -> Result<GaussianMeasure> {
    let (mean, cov) = affine_image_moments(matrix, shift, g)?;
    let min_eig = linalg::min_eigenvalue(&cov);
    if min_eig < 1e-12 {
        return Err(Error::DegenerateImage { min_eig });
    }
    GaussianMeasure::new(mean, cov)
}

/// Mean and covariance of the affine image, without the definiteness guard.
/// The covariance may be singular (measure supported on a subspace).
pub fn affine_image_moments(
    matrix: &DMatrix<f64>,
    shift: &DVector<f64>,
    g: &GaussianMeasure,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if matrix.ncols() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: matrix.ncols(),
        });
    }
    if shift.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            got: shift.len(),
        });
    }
    let mean = matrix * g.mean() + shift;
    let cov = linalg::symmetrize(&(matrix * g.cov() * matrix.transpose()));
    Ok((mean, cov))
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Nonlinear forward map given by evaluation and Jacobian closures.
#[derive(Clone)]
pub struct SmoothForwardMap {
    evaluate: Arc<VecFn>,
    jacobian: Arc<JacFn>,
    inverse: Option<Arc<VecFn>>,
    input_dim: usize,
    output_dim: usize,
    /// Hölder exponent of the inverse, metadata only: the solvers here are
    /// exercised with β = 1 (Lipschitz) maps.
    holder_beta: f64,
}

impl fmt::Debug for SmoothForwardMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothForwardMap")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("has_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl SmoothForwardMap {
    pub fn new<E, J>(input_dim: usize, output_dim: usize, evaluate: E, jacobian: J) -> Self
    where
        E: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            evaluate: Arc::new(evaluate),
            jacobian: Arc::new(jacobian),
            inverse: None,
            input_dim,
            output_dim,
            holder_beta: 1.0,
        }
    }

    /// Record the Hölder continuity exponent of the inverse (metadata).
    pub fn with_holder_beta(mut self, beta: f64) -> Self {
        self.holder_beta = beta;
        self
    }

    pub fn holder_beta(&self) -> f64 {
        self.holder_beta
    }

    pub fn with_inverse<I>(mut self, inverse: I) -> Self
    where
        I: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    /// Attach a damped-Newton inverse started from `initial_guess`.
    pub fn with_newton_inverse(mut self, initial_guess: DVector<f64>) -> Self {
        let eval = Arc::clone(&self.evaluate);
        let jac = Arc::clone(&self.jacobian);
        self.inverse = Some(Arc::new(move |y: &DVector<f64>| {
            newton_invert(eval.as_ref(), jac.as_ref(), y, &initial_guess)
                .expect("newton inversion failed; map not invertible near guess")
        }));
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn evaluate(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.evaluate)(u)
    }

    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(u)
    }

    pub fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.inverse {
            Some(inv) => Ok(inv(y)),
            None => Err(Error::MissingInverse),
        }
    }

    /// Map every atom through G; weights unchanged.
    pub fn pushforward(&self, m: &ParticleMeasure) -> Result<ParticleMeasure> {
        if m.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: m.dim(),
            });
        }
        let mut points = DMatrix::zeros(m.len(), self.output_dim);
        for i in 0..m.len() {
            let out = self.evaluate(&m.point(i));
            points.row_mut(i).copy_from(&out.transpose());
        }
        ParticleMeasure::new(points, m.weights().clone())
    }

    /// Contract check: Jacobian vs central finite differences at probe points.
    pub fn validate_jacobian(&self, probes: &[DVector<f64>], rel_tol: f64) -> Result<()> {
        for p in probes {
            let j = self.jacobian(p);
            let scale = 1.0 + j.abs().max();
            for k in 0..self.input_dim {
                let eps = 1e-6 * (1.0 + p[k].abs());
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[k] += eps;
                lo[k] -= eps;
                let fd = (self.evaluate(&hi) - self.evaluate(&lo)) / (2.0 * eps);
                for i in 0..self.output_dim {
                    if (j[(i, k)] - fd[i]).abs() > rel_tol * scale {
                        return Err(Error::InvalidParameter {
                            name: "jacobian",
                            reason: format!(
                                "entry ({i},{k}) deviates from finite difference: {} vs {}",
                                j[(i, k)],
                                fd[i]
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// B(y) = J J ᵀ evaluated at u = G⁻¹(y).
pub fn mobility_matrix(map: &SmoothForwardMap, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let u = map.inverse(y)?;
    let j = map.jacobian(&u);
    Ok(linalg::symmetrize(&(&j * j.transpose())))
}

/// Damped Newton solve of G(u) = y with a bisection fallback in 1D.
/// Residual tolerance 1e-10.
pub fn newton_invert(
    evaluate: &VecFn,
    jacobian: &JacFn,
    y: &DVector<f64>,
    initial_guess: &DVector<f64>,
) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 200;
    let mut u = initial_guess.clone();
    let mut res = evaluate(&u) - y;
    for _ in 0..MAX_ITER {
        if res.norm() <= TOL {
            return Ok(u);
        }
        let j = jacobian(&u);
        let step = match j.clone().lu().solve(&res) {
            Some(s) => s,
            None => break,
        };
        let mut damping = 1.0;
        let mut advanced = false;
        while damping >= 1e-8 {
            let trial = &u - damping * &step;
            let trial_res = evaluate(&trial) - y;
            if trial_res.norm() < res.norm() {
                u = trial;
                res = trial_res;
                advanced = true;
                break;
            }
            damping *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    if res.norm() <= TOL {
        return Ok(u);
    }
    if y.len() == 1 && initial_guess.len() == 1 {
        return bisect_1d(evaluate, y[0], initial_guess[0]);
    }
    Err(Error::MissingInverse)
}

fn bisect_1d(evaluate: &VecFn, y: f64, x0: f64) -> Result<DVector<f64>> {
    let f = |x: f64| evaluate(&DVector::from_element(1, x))[0] - y;
    // expand a bracket around the guess
    let mut lo = x0 - 1.0;
    let mut hi = x0 + 1.0;
    let mut width = 1.0;
    for _ in 0..80 {
        if f(lo) * f(hi) <= 0.0 {
            break;
        }
        width *= 2.0;
        lo = x0 - width;
        hi = x0 + width;
    }
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo * fhi > 0.0 {
        return Err(Error::MissingInverse);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid.abs() <= 1e-12 || (hi - lo) < 1e-15 * (1.0 + mid.abs()) {
            return Ok(DVector::from_element(1, mid));
        }
        if flo * fmid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
    }
    Ok(DVector::from_element(1, 0.5 * (lo + hi)))
}

/// Linear or smooth forward map.
#[derive(Debug, Clone)]
pub enum ForwardMap {
    Linear(LinearForwardMap),
    Smooth(SmoothForwardMap),
}

impl ForwardMap {
    pub fn input_dim(&self) -> usize {
        match self {
            ForwardMap::Linear(m) => m.ncols(),
            ForwardMap::Smooth(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ForwardMap::Linear(m) => m.nrows(),
            ForwardMap::Smooth(m) => m.output_dim(),
        }
    }

    pub fn evaluate(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ForwardMap::Linear(m) => m.apply(u),
            ForwardMap::Smooth(m) => m.evaluate(u),
        }
    }

    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ForwardMap::Linear(m) => m.matrix().clone(),
            ForwardMap::Smooth(m) => m.jacobian(u),
        }
    }

    pub fn pushforward(&self, m: &ParticleMeasure) -> Result<ParticleMeasure> {
        match self {
            ForwardMap::Linear(map) => map.pushforward(m),
            ForwardMap::Smooth(map) => map.pushforward(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_pseudo_inverse() {
        let a = LinearForwardMap::from_rows(&[&[3.0]]).unwrap();
        assert_relative_eq!(a.pseudo_inverse()[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn row_selector_pseudo_inverse() {
        let a = LinearForwardMap::from_rows(&[&[1.0, 0.0]]).unwrap();
        let p = a.pseudo_inverse();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn minimal_norm_solution() {
        // A = [1, 1]: A† y is the minimizer of |u|² subject to u₁+u₂ = y.
        let a = LinearForwardMap::from_rows(&[&[1.0, 1.0]]).unwrap();
        let p = a.pseudo_inverse();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projectors_identity_map() {
        let a = LinearForwardMap::identity(2);
        let (pr, pn) = a.projectors();
        assert_relative_eq!(pr, &DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(pn.abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projectors_axis_split() {
        let a = LinearForwardMap::from_rows(&[&[1.0, 0.0]]).unwrap();
        let (pr, pn) = a.projectors();
        assert_relative_eq!(pr, &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        assert_relative_eq!(pn, &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn projector_properties_random_wide() {
        let a = LinearForwardMap::from_rows(&[
            &[0.3, -1.2, 0.7, 2.0],
            &[1.1, 0.4, -0.6, 0.2],
        ])
        .unwrap();
        let (pr, pn) = a.projectors();
        assert_relative_eq!(pr * pr, pr.clone(), epsilon = 1e-10);
        assert_relative_eq!(pn * pn, pn.clone(), epsilon = 1e-10);
        assert_relative_eq!(pr + pn, DMatrix::identity(4, 4), epsilon = 1e-10);
        assert_relative_eq!((a.matrix() * pn).abs().max(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn pushforward_scales_atoms() {
        let a = LinearForwardMap::from_rows(&[&[2.0]]).unwrap();
        let m = ParticleMeasure::from_points_1d(&[1.0], &[1.0]).unwrap();
        let out = a.pushforward(&m).unwrap();
        assert_relative_eq!(out.points()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(out.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pushforward_matches_matvec() {
        let a = LinearForwardMap::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        let pts = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.25, -0.75, 3.0]);
        let m = ParticleMeasure::uniform(pts.clone()).unwrap();
        let out = a.pushforward(&m).unwrap();
        for i in 0..3 {
            let expect = a.matrix() * pts.row(i).transpose();
            assert_relative_eq!(out.point(i), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn pushforward_composes() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -1.0]);
        let ab = LinearForwardMap::new(&a * &b).unwrap();
        let ma = LinearForwardMap::new(a).unwrap();
        let mb = LinearForwardMap::new(b).unwrap();
        let pts = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.3, -2.0, 4.0, 1.5]);
        let m = ParticleMeasure::uniform(pts).unwrap();
        let lhs = ab.pushforward(&m).unwrap();
        let rhs = ma.pushforward(&mb.pushforward(&m).unwrap()).unwrap();
        assert_eq!(lhs.points(), rhs.points());
    }

    #[test]
    fn gaussian_affine_image() {
        let g = GaussianMeasure::scalar(2.0, 1.0).unwrap();
        let out = pushforward_gaussian(
            &DMatrix::from_element(1, 1, 0.5),
            &DVector::zeros(1),
            &g,
        )
        .unwrap();
        assert_relative_eq!(out.mean()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(out.cov()[(0, 0)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_sum_of_coordinates() {
        let g = GaussianMeasure::standard(2);
        let out = pushforward_gaussian(
            &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            &DVector::zeros(1),
            &g,
        )
        .unwrap();
        assert_relative_eq!(out.mean()[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(out.cov()[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_degenerate_image_rejected() {
        let g = GaussianMeasure::standard(1);
        let err = pushforward_gaussian(
            &DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            &DVector::zeros(2),
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateImage { .. }));
    }

    #[test]
    fn augmented_map_stacks() {
        let a = LinearForwardMap::from_rows(&[&[1.0]]).unwrap();
        let aug = a.augmented(1.0).unwrap();
        assert_eq!(aug.nrows(), 2);
        assert_relative_eq!(aug.sigma_min(), 2.0f64.sqrt(), epsilon = 1e-12);

        let a2 = LinearForwardMap::from_rows(&[&[2.0]]).unwrap();
        let aug2 = a2.augmented(1.0).unwrap();
        assert_relative_eq!(aug2.sigma_min(), 5.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn augmented_pinv_matches_tikhonov_operator() {
        let a = LinearForwardMap::from_rows(&[&[1.3, -0.4], &[0.2, 0.9], &[-1.1, 0.5]]).unwrap();
        let alpha = 0.7;
        let aug = a.augmented(alpha).unwrap();
        let aug_pinv = aug.pseudo_inverse();
        let op = a.tikhonov_operator(alpha);
        // A†_aug applied to stacked (y, 0) is the first n columns of A†_aug
        let front = aug_pinv.view((0, 0), (2, 3));
        assert_relative_eq!(DMatrix::from(front), op, epsilon = 1e-10);
    }

    #[test]
    fn tikhonov_operator_at_zero_is_pinv() {
        let a = LinearForwardMap::from_rows(&[&[1.0, 0.2], &[0.0, 2.0], &[0.4, -1.0]]).unwrap();
        assert_relative_eq!(a.tikhonov_operator(0.0), a.pseudo_inverse().clone(), epsilon = 1e-10);
    }

    #[test]
    fn mobility_identity_map() {
        let id = SmoothForwardMap::new(
            1,
            1,
            |u: &DVector<f64>| u.clone(),
            |_: &DVector<f64>| DMatrix::identity(1, 1),
        )
        .with_inverse(|y: &DVector<f64>| y.clone());
        let b = mobility_matrix(&id, &DVector::from_element(1, 3.0)).unwrap();
        assert_relative_eq!(b[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn mobility_linear_map_is_aat() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let a2 = a.clone();
        let ainv = a.clone().try_inverse().unwrap();
        let map = SmoothForwardMap::new(
            2,
            2,
            move |u: &DVector<f64>| &a * u,
            move |_: &DVector<f64>| a2.clone(),
        )
        .with_inverse(move |y: &DVector<f64>| &ainv * y);
        let b = mobility_matrix(&map, &DVector::from_row_slice(&[0.4, -1.0])).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_relative_eq!(b, &a * a.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn mobility_cubic_diffeomorphism() {
        // G(u) = u³ + u, B(y) = (3u²+1)² at u = G⁻¹(y); at y = 0, B = 1.
        let map = SmoothForwardMap::new(
            1,
            1,
            |u: &DVector<f64>| DVector::from_element(1, u[0].powi(3) + u[0]),
            |u: &DVector<f64>| DMatrix::from_element(1, 1, 3.0 * u[0] * u[0] + 1.0),
        )
        .with_newton_inverse(DVector::zeros(1));
        let b0 = mobility_matrix(&map, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(b0[(0, 0)], 1.0, epsilon = 1e-9);

        let y = DVector::from_element(1, 2.0); // u = 1
        let b = mobility_matrix(&map, &y).unwrap();
        assert_relative_eq!(b[(0, 0)], 16.0, epsilon = 1e-8);
    }

    #[test]
    fn mobility_requires_inverse() {
        let map = SmoothForwardMap::new(
            1,
            1,
            |u: &DVector<f64>| u.clone(),
            |_: &DVector<f64>| DMatrix::identity(1, 1),
        );
        let err = mobility_matrix(&map, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::MissingInverse));
    }

    #[test]
    fn jacobian_contract_detects_mismatch() {
        let good = SmoothForwardMap::new(
            1,
            1,
            |u: &DVector<f64>| DVector::from_element(1, u[0] * u[0]),
            |u: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * u[0]),
        );
        let probes = vec![DVector::from_element(1, 0.7), DVector::from_element(1, -1.3)];
        good.validate_jacobian(&probes, 1e-5).unwrap();

        let bad = SmoothForwardMap::new(
            1,
            1,
            |u: &DVector<f64>| DVector::from_element(1, u[0] * u[0]),
            |u: &DVector<f64>| DMatrix::from_element(1, 1, 3.0 * u[0]),
        );
        assert!(bad.validate_jacobian(&probes, 1e-5).is_err());
    }

    #[test]
    fn rank_deficient_rejected() {
        let err = LinearForwardMap::from_rows(&[&[1.0, 0.0], &[2.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }
}
