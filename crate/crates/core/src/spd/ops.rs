use nalgebra::DMatrix;

use super::{SpdError, SpdMatrix, Spectral, SymMatrix};

/// Spatial covariance `(1/L)·Z·Zᵀ + ε·I` of a channels × samples window, `Z` the
/// row-centred window.
pub fn covariance(window: &DMatrix<f64>, shrinkage: f64) -> Result<SpdMatrix, SpdError> {
    let (m, l) = window.shape();
    if m == 0 || l == 0 {
        return Err(SpdError::Empty);
    }
    if !window.iter().all(|v| v.is_finite()) || !shrinkage.is_finite() || shrinkage < 0.0 {
        return Err(SpdError::NonFinite);
    }
    let mut centred = window.clone();
    for mut row in centred.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let mut cov = &centred * centred.transpose() / l as f64;
    for i in 0..m {
        cov[(i, i)] += shrinkage;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    let spec = Spectral::new(&cov)?;
    SpdMatrix::check_spectrum(&spec).map_err(|e| if shrinkage == 0.0 { SpdError::DegenerateInput } else { e })?;
    Ok(SpdMatrix::from_trusted(cov))
}

/// [`covariance`] with shrinkage relative to the mean eigenvalue:
/// `ε = relative·tr(C₀)/M`, `C₀` the unshrunk estimate. A window with zero
/// variance falls back to `ε = relative`.
pub fn shrunk_covariance(window: &DMatrix<f64>, relative: f64) -> Result<SpdMatrix, SpdError> {
    let (m, l) = window.shape();
    if m == 0 || l == 0 {
        return Err(SpdError::Empty);
    }
    let mut trace = 0.0;
    for row in window.row_iter() {
        let mean = row.mean();
        trace += row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64;
    }
    let scale = if trace > 0.0 { trace / m as f64 } else { 1.0 };
    covariance(window, relative * scale)
}

fn positive_spectrum(x: &DMatrix<f64>) -> Result<Spectral, SpdError> {
    let spec = Spectral::new(x)?;
    SpdMatrix::check_spectrum(&spec)?;
    Ok(spec)
}

/// Matrix logarithm `U·diag(ln λ)·Uᵀ`.
pub fn spd_log(x: &DMatrix<f64>) -> Result<SymMatrix, SpdError> {
    let spec = positive_spectrum(x)?;
    Ok(SymMatrix::symmetrize(spec.map(f64::ln)))
}

/// Matrix exponential of a symmetric matrix.
pub fn spd_exp(v: &DMatrix<f64>) -> Result<SpdMatrix, SpdError> {
    let spec = Spectral::new(v)?;
    let out = spec.map(f64::exp);
    SpdMatrix::new((&out + out.transpose()) * 0.5)
}

pub fn spd_pow(x: &DMatrix<f64>, p: f64) -> Result<SpdMatrix, SpdError> {
    let spec = positive_spectrum(x)?;
    let out = spec.map(|l| l.powf(p));
    Ok(SpdMatrix::from_trusted((&out + out.transpose()) * 0.5))
}

pub fn spd_sqrt(x: &DMatrix<f64>) -> Result<SpdMatrix, SpdError> {
    spd_pow(x, 0.5)
}

pub fn spd_invsqrt(x: &DMatrix<f64>) -> Result<SpdMatrix, SpdError> {
    spd_pow(x, -0.5)
}

/// Affine-invariant geodesic distance `‖log(X^{-1/2}·Y·X^{-1/2})‖_F`.
pub fn airm_distance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64, SpdError> {
    if x.shape() != y.shape() {
        return Err(SpdError::DimensionMismatch(x.nrows(), y.nrows()));
    }
    positive_spectrum(y)?;
    let w = spd_invsqrt(x)?;
    let inner = &*w * y * &*w;
    let spec = Spectral::new(&inner)?;
    Ok(spec
        .values
        .iter()
        .map(|&l| l.max(f64::MIN_POSITIVE).ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `H = I − n⁻¹·11ᵀ`.
pub fn centering_matrix(n: usize) -> SymMatrix {
    let inv = 1.0 / n as f64;
    SymMatrix::symmetrize(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv }))
}

/// Smallest eigenvalue of `H·(−½(G∘G − D∘D))·H`.
///
/// Non-negative (up to rounding) whenever the entrywise difference of squared
/// distances is itself a squared Euclidean distance matrix; a negative value is
/// a diagnostic, not an error.
pub fn check_psd_gram(g: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<f64, SpdError> {
    if !g.is_square() {
        return Err(SpdError::NotSquare {
            rows: g.nrows(),
            cols: g.ncols(),
        });
    }
    if g.shape() != d.shape() {
        return Err(SpdError::DimensionMismatch(g.nrows(), d.nrows()));
    }
    let n = g.nrows();
    let h = centering_matrix(n);
    let a = (g.component_mul(g) - d.component_mul(d)) * -0.5;
    let centred = &*h * a * &*h;
    Ok(Spectral::new(&centred)?.min())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KarcherOptions {
    pub iterations: usize,
    /// Iteration stops once the Riemannian gradient norm drops below this.
    pub tolerance: f64,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KarcherResult {
    pub mean: SpdMatrix,
    /// Gradient norm observed at each visited iterate.
    pub residuals: Vec<f64>,
}

/// One fixed-point step of the Karcher iteration, with everything needed to
/// differentiate through it.
#[derive(Debug, Clone)]
pub(crate) struct KarcherStep {
    pub point: Spectral,
    pub sqrt: DMatrix<f64>,
    pub invsqrt: DMatrix<f64>,
    /// Empty unless steps were requested for differentiation.
    pub whitened: Vec<Spectral>,
    pub mean_log: Spectral,
    pub step: f64,
}

pub(crate) struct KarcherTrace {
    pub mean: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub steps: Vec<KarcherStep>,
}

/// Step sizes below this without a residual decrease count as divergence.
const KARCHER_MIN_STEP: f64 = 1.0 / 1024.0;

/// Fixed-point iteration `G ← G^{1/2}·exp(t·mean_i log(G^{-1/2} X_i G^{-1/2}))·G^{1/2}`
/// from the arithmetic mean with `t = 1`. When the residual (the norm of the
/// mean log) grows, the step is retaken from the previous point with `t`
/// halved; `t` stays reduced afterwards. Widely spread batches need this,
/// the unit step oscillates on them. Each evaluation counts against
/// `opts.iterations`.
pub(crate) fn karcher_trace(
    samples: &[&DMatrix<f64>],
    opts: KarcherOptions,
    keep_steps: bool,
) -> Result<KarcherTrace, SpdError> {
    let n = samples.len();
    if n == 0 {
        return Err(SpdError::Empty);
    }
    let dim = samples[0].nrows();
    let mut g = DMatrix::zeros(dim, dim);
    for x in samples {
        if x.shape() != (dim, dim) {
            return Err(SpdError::DimensionMismatch(x.nrows(), dim));
        }
        g += *x;
    }
    g /= n as f64;

    let mut t = 1.0;
    let mut residuals: Vec<f64> = Vec::with_capacity(opts.iterations);
    let mut steps: Vec<KarcherStep> = Vec::new();
    for _ in 0..opts.iterations {
        let point = positive_spectrum(&g)?;
        let sqrt = point.map(f64::sqrt);
        let invsqrt = point.map(|l| 1.0 / l.sqrt());
        let mut whitened = Vec::with_capacity(if keep_steps { n } else { 0 });
        let mut mean_log = DMatrix::zeros(dim, dim);
        for x in samples {
            let a = &invsqrt * *x * &invsqrt;
            let spec = positive_spectrum(&a)?;
            mean_log += spec.map(f64::ln);
            if keep_steps {
                whitened.push(spec);
            }
        }
        mean_log /= n as f64;
        let residual = mean_log.norm();
        if let (Some(&previous), Some(last)) = (residuals.last(), steps.last_mut()) {
            if residual > previous && previous > opts.tolerance {
                t *= 0.5;
                if t < KARCHER_MIN_STEP {
                    return Err(SpdError::KarcherDivergence {
                        previous,
                        current: residual,
                    });
                }
                last.step = t;
                let next = &last.sqrt * last.mean_log.map(|l| (t * l).exp()) * &last.sqrt;
                g = (&next + next.transpose()) * 0.5;
                continue;
            }
        }
        residuals.push(residual);
        if residual < opts.tolerance {
            break;
        }
        let mean_log = Spectral::new(&mean_log)?;
        let next = &sqrt * mean_log.map(|l| (t * l).exp()) * &sqrt;
        g = (&next + next.transpose()) * 0.5;
        steps.push(KarcherStep {
            point,
            sqrt,
            invsqrt,
            whitened,
            mean_log,
            step: t,
        });
    }
    if !keep_steps {
        steps.clear();
    }
    Ok(KarcherTrace {
        mean: g,
        residuals,
        steps,
    })
}

/// Karcher (Fréchet) mean under the affine-invariant metric.
pub fn karcher_mean(samples: &[SpdMatrix], opts: KarcherOptions) -> Result<KarcherResult, SpdError> {
    let refs: Vec<&DMatrix<f64>> = samples.iter().map(|s| &**s).collect();
    let trace = karcher_trace(&refs, opts, false)?;
    Ok(KarcherResult {
        mean: SpdMatrix::new(trace.mean)?,
        residuals: trace.residuals,
    })
}
