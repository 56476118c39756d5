//! Seeded random draws of matrices used for initialization and synthetic data.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spd::SpdMatrix;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Symmetric matrix with standard-normal upper triangle.
pub fn random_sym<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = gaussian_matrix(n, n, rng);
    (&a + a.transpose()) * std::f64::consts::FRAC_1_SQRT_2
}

/// `n × p` matrix with orthonormal columns (QR of a Gaussian draw, sign-fixed).
pub fn random_stiefel<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(p <= n, "random_stiefel: p={p} > n={n}");
    crate::layers::stiefel::orthonormalize(&gaussian_matrix(n, p, rng))
}

/// SPD matrix `Q·diag(e^{u})·Qᵀ` with `u` uniform in `[-spread, spread]`.
pub fn random_spd_spread<R: Rng + ?Sized>(n: usize, spread: f64, rng: &mut R) -> SpdMatrix {
    let q = random_stiefel(n, n, rng);
    let mut scaled = q.clone();
    for mut col in scaled.column_iter_mut() {
        col *= rng.random_range(-spread..=spread).exp();
    }
    let m = &scaled * q.transpose();
    SpdMatrix::from_trusted((&m + m.transpose()) * 0.5)
}

pub fn random_spd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SpdMatrix {
    random_spd_spread(n, 1.5, rng)
}
