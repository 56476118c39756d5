use nalgebra::DMatrix;

use super::SelectError;
use crate::spd::{centering_matrix, spd_log, SpdError, SpdMatrix, Spectral};

fn check_samples(samples: &[SpdMatrix]) -> Result<usize, SelectError> {
    if samples.len() < 2 {
        return Err(SelectError::InsufficientSamples(samples.len()));
    }
    let dim = samples[0].dim();
    if let Some(bad) = samples.iter().find(|x| x.dim() != dim) {
        return Err(SelectError::ShapeMismatch(format!(
            "sample of dim {} among dim {dim}",
            bad.dim()
        )));
    }
    Ok(dim)
}

/// Pairwise affine-invariant distances `G[i][j] = ‖log(Xᵢ^{-1/2} Xⱼ Xᵢ^{-1/2})‖_F`.
pub fn geodesic_matrix(samples: &[SpdMatrix]) -> Result<DMatrix<f64>, SelectError> {
    check_samples(samples)?;
    let n = samples.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let invsqrt = samples[i].spectral()?.map(|l| 1.0 / l.sqrt());
        for j in i + 1..n {
            if samples[i] == samples[j] {
                continue;
            }
            let a = &invsqrt * &*samples[j] * &invsqrt;
            let spec = Spectral::new(&a)?;
            if spec.min() <= 0.0 {
                return Err(SpdError::NotPositiveDefinite {
                    min: spec.min(),
                    max: spec.max(),
                }
                .into());
            }
            let d = spec.values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt();
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    Ok(g)
}

/// `D[i][j] = ‖Wᵀ(log Xᵢ − log Xⱼ)W‖_F`.
pub fn tangent_distance_matrix(samples: &[SpdMatrix], w: &DMatrix<f64>) -> Result<DMatrix<f64>, SelectError> {
    check_samples(samples)?;
    let logs = samples
        .iter()
        .map(|x| spd_log(x).map(|l| l.into_inner()))
        .collect::<Result<Vec<_>, _>>()?;
    tangent_distance_matrix_from_logs(&logs, w)
}

/// [`tangent_distance_matrix`] on precomputed matrix logarithms.
pub fn tangent_distance_matrix_from_logs(logs: &[DMatrix<f64>], w: &DMatrix<f64>) -> Result<DMatrix<f64>, SelectError> {
    let n = logs.len();
    if let Some(l) = logs.iter().find(|l| l.nrows() != w.nrows()) {
        return Err(SelectError::ShapeMismatch(format!(
            "log of dim {} against W with {} rows",
            l.nrows(),
            w.nrows()
        )));
    }
    let projected: Vec<DMatrix<f64>> = logs.iter().map(|l| w.transpose() * l * w).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (&projected[i] - &projected[j]).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Double-centred inner products `−½·H·(dist∘dist)·H`.
pub fn gamma(dist: &DMatrix<f64>) -> DMatrix<f64> {
    let h = centering_matrix(dist.nrows());
    let g = &*h * dist.component_mul(dist) * &*h * -0.5;
    (&g + g.transpose()) * 0.5
}
