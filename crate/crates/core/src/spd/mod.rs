//! Symmetric positive-definite matrix algebra.
//!
//! Everything downstream (filter-bank covariances, the manifold layers, channel
//! selection) is expressed through the types and maps in this module: the
//! validated [`SpdMatrix`] / [`SymMatrix`] newtypes, spectral functions built on
//! a sorted eigendecomposition, the affine-invariant distance, and the Karcher
//! mean used by batch normalization and class representatives.

mod eig;
mod ops;

use std::ops::Deref;

use nalgebra::DMatrix;
use thiserror::Error;

pub use eig::{Spectral, COINCIDENT_EIGEN_GAP};
pub use ops::{
    airm_distance, centering_matrix, check_psd_gram, covariance, karcher_mean, shrunk_covariance, spd_exp, spd_invsqrt,
    spd_log, spd_pow, spd_sqrt, KarcherOptions, KarcherResult,
};
pub(crate) use ops::{karcher_trace, KarcherStep};

/// Relative tolerance for the symmetry invariant.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// `λ_min > SPD_RATIO · λ_max` is required of every SPD matrix.
pub const SPD_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (λ_min = {min:e}, λ_max = {max:e})")]
    NotPositiveDefinite { min: f64, max: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is singular without shrinkage (rank-deficient window)")]
    DegenerateInput,
    #[error("eigendecomposition failed to converge")]
    ConvergenceFailure,
    #[error("karcher mean iteration diverged (residual {previous:e} -> {current:e})")]
    KarcherDivergence { previous: f64, current: f64 },
    #[error("empty sample set")]
    Empty,
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() / scale
}

fn check_finite(m: &DMatrix<f64>) -> Result<(), SpdError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SpdError::NonFinite)
    }
}

/// A symmetric matrix; elements of the tangent space at the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, SpdError> {
        if !m.is_square() {
            return Err(SpdError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        check_finite(&m)?;
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(SpdError::NotSymmetric(asym));
        }
        Ok(Self(m))
    }

    /// Wraps `m` after averaging it with its transpose.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// A symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, SpdError> {
        let sym = SymMatrix::new(m)?;
        let spec = Spectral::new(&sym)?;
        Self::check_spectrum(&spec)?;
        Ok(Self(sym.0))
    }

    /// Wraps a matrix whose positive definiteness follows from how it was built
    /// (congruence by a full-rank map, eigenvalue clamping, exponentials).
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub(crate) fn check_spectrum(spec: &Spectral) -> Result<(), SpdError> {
        let (min, max) = (spec.min(), spec.max());
        if !(max > 0.0 && min > SPD_RATIO * max) {
            return Err(SpdError::NotPositiveDefinite { min, max });
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, SpdError> {
        let n = diag.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn spectral(&self) -> Result<Spectral, SpdError> {
        Spectral::new(&self.0)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Covariances of one trial indexed by (window, band): shape `S × F × M × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdTensor {
    windows: usize,
    bands: usize,
    mats: Vec<SpdMatrix>,
}

impl SpdTensor {
    /// `mats` is window-major: entry `s * bands + f`.
    pub fn new(windows: usize, bands: usize, mats: Vec<SpdMatrix>) -> Result<Self, SpdError> {
        if mats.len() != windows * bands {
            return Err(SpdError::DimensionMismatch(mats.len(), windows * bands));
        }
        if let Some(first) = mats.first() {
            let n = first.dim();
            if let Some(bad) = mats.iter().find(|m| m.dim() != n) {
                return Err(SpdError::DimensionMismatch(bad.dim(), n));
            }
        }
        Ok(Self { windows, bands, mats })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn channels(&self) -> usize {
        self.mats.first().map_or(0, SpdMatrix::dim)
    }

    pub fn get(&self, window: usize, band: usize) -> &SpdMatrix {
        &self.mats[window * self.bands + band]
    }

    pub fn as_slice(&self) -> &[SpdMatrix] {
        &self.mats
    }
}
