//! Error type shared by every solver in the crate.

use thiserror::Error;

/// Errors produced by measure constructors, forward maps, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Total mass of a measure is zero, negative, or not finite.
    #[error("measure has non-positive or non-finite total mass ({mass})")]
    ZeroMass { mass: f64 },

    /// A measure failed a construction invariant.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// Restriction of a Gaussian to a subspace is not positive definite.
    #[error("restricted quadratic form is not positive definite")]
    DegenerateRestriction,

    /// Operand dimensions do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A singular value fell below the rank threshold.
    #[error("matrix is rank deficient (sigma[{index}] = {value:.3e})")]
    RankDeficient { index: usize, value: f64 },

    /// Affine pushforward of a Gaussian left the class of nondegenerate Gaussians.
    #[error("pushforward image covariance is degenerate (min eigenvalue {min_eig:.3e})")]
    DegenerateImage { min_eig: f64 },

    /// A nonlinear map was used where its inverse is required but absent.
    #[error("forward map has no inverse")]
    MissingInverse,

    /// The exact transport solver was asked for a plan above its size cap.
    #[error("transport plan of {entries} entries exceeds cap {cap}")]
    SizeCap { entries: usize, cap: usize },

    /// Two grid measures do not share lower/upper/shape.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Prior vanishes where the pulled-back data is positive.
    #[error("support mismatch: prior vanishes on {cells} cells where data is positive")]
    SupportMismatch { cells: usize },

    /// Solver requires an overdetermined or square map.
    #[error("map shape {rows}x{cols} not accepted: {reason}")]
    ShapeError {
        rows: usize,
        cols: usize,
        reason: String,
    },

    /// Time step violates the CFL stability limit of the grid scheme.
    #[error("CFL violation: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    /// Particle flow needs a kernel bandwidth but none was configured.
    #[error("bandwidth required: current data density has no analytic form")]
    BandwidthRequired,

    /// A particle velocity evaluated to NaN or infinity.
    #[error("non-finite velocity at atom {atom}")]
    NonFiniteVelocity { atom: usize },

    /// Time step resolves the fastest mode too coarsely for the ODE
    /// integrator to be trusted.
    #[error("stiffness warning: dt x largest rate = {product:.3e} exceeds 0.1")]
    StiffnessWarning { product: f64 },

    /// Configuration value outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
