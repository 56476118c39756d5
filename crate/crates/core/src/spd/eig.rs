use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SpdError;

/// Eigenvalues closer than this are treated as coincident in divided differences.
pub const COINCIDENT_EIGEN_GAP: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_SWEEPS: usize = 10_000;

/// Eigendecomposition `A = U diag(λ) Uᵀ` of a symmetric matrix with eigenvalues
/// sorted in descending order.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectral {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, SpdError> {
        if !a.is_square() {
            return Err(SpdError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        // nalgebra reads only the lower triangle; symmetrize so both halves count.
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_SWEEPS).ok_or(SpdError::ConvergenceFailure)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[self.dim() - 1]
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        &scaled * self.vectors.transpose()
    }

    /// Reverse-mode derivative of `A ↦ U diag(f(λ)) Uᵀ` (Daleckii–Krein).
    ///
    /// `upstream` is the gradient of a scalar loss with respect to the output;
    /// the returned matrix is the symmetric gradient with respect to `A`.
    pub fn backward(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, upstream: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let u = &self.vectors;
        let sym = (upstream + upstream.transpose()) * 0.5;
        let mut inner = u.transpose() * sym * u;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        for i in 0..n {
            for j in 0..n {
                let (li, lj) = (self.values[i], self.values[j]);
                let phi = if (li - lj).abs() < COINCIDENT_EIGEN_GAP {
                    df(li)
                } else {
                    (fl[i] - fl[j]) / (li - lj)
                };
                inner[(i, j)] *= phi;
            }
        }
        u * inner * u.transpose()
    }
}
