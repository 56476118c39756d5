//! Riemannian batch normalization: re-centres a batch so that its Karcher mean
//! is the identity, optionally followed by a learned SPD bias.
//!
//! The training-mode backward pass differentiates through the unrolled
//! fixed-point iterations of the Karcher mean, so the batch statistics receive
//! gradient exactly as computed.

use nalgebra::DMatrix;

use super::LayerError;
use crate::spd::{karcher_trace, KarcherOptions, KarcherStep, SpdMatrix, Spectral};

/// `(G^{-1/2}, whitened inputs, bias spectrum and exp(B/2), outputs)`.
type Normalized = (
    DMatrix<f64>,
    Vec<DMatrix<f64>>,
    Option<(Spectral, DMatrix<f64>)>,
    Vec<SpdMatrix>,
);

#[derive(Debug, Clone)]
struct RbnCache {
    inputs: Vec<DMatrix<f64>>,
    /// `None` in inference mode: the centre is a constant.
    steps: Option<Vec<KarcherStep>>,
    centre: Spectral,
    invsqrt: DMatrix<f64>,
    normalized: Vec<DMatrix<f64>>,
    bias: Option<(Spectral, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
pub struct RbnLayer {
    karcher: KarcherOptions,
    momentum: f64,
    running_mean: SpdMatrix,
    /// Symmetric log of the bias point; the bias applied is `exp(bias/2)·Y·exp(bias/2)`.
    log_bias: Option<DMatrix<f64>>,
    cache: Option<Box<RbnCache>>,
}

impl PartialEq for RbnLayer {
    fn eq(&self, other: &Self) -> bool {
        self.karcher == other.karcher
            && self.momentum.to_bits() == other.momentum.to_bits()
            && self.running_mean == other.running_mean
            && self.log_bias == other.log_bias
    }
}

/// Output of an RBN backward pass.
#[derive(Debug, Clone)]
pub struct RbnGradients {
    pub inputs: Vec<DMatrix<f64>>,
    pub log_bias: Option<DMatrix<f64>>,
}

impl RbnLayer {
    pub fn new(dim: usize, karcher_iterations: usize, momentum: f64, learn_bias: bool) -> Result<Self, LayerError> {
        if karcher_iterations == 0 {
            return Err(LayerError::InvalidParameter(
                "karcher_iterations must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(LayerError::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            karcher: KarcherOptions {
                iterations: karcher_iterations,
                tolerance: 1e-9,
            },
            momentum,
            running_mean: SpdMatrix::identity(dim),
            log_bias: learn_bias.then(|| DMatrix::zeros(dim, dim)),
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.running_mean.dim()
    }

    pub fn karcher_iterations(&self) -> usize {
        self.karcher.iterations
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn running_mean(&self) -> &SpdMatrix {
        &self.running_mean
    }

    pub fn set_running_mean(&mut self, mean: SpdMatrix) -> Result<(), LayerError> {
        if mean.dim() != self.dim() {
            return Err(LayerError::DimensionMismatch {
                expected: self.dim(),
                found: mean.dim(),
            });
        }
        self.running_mean = mean;
        Ok(())
    }

    pub fn log_bias(&self) -> Option<&DMatrix<f64>> {
        self.log_bias.as_ref()
    }

    pub(crate) fn set_log_bias(&mut self, bias: Option<DMatrix<f64>>) {
        self.log_bias = bias;
    }

    pub fn num_parameters(&self) -> usize {
        let n = self.dim();
        self.log_bias.as_ref().map_or(0, |_| n * (n + 1) / 2)
    }

    fn check_batch(&self, batch: &[SpdMatrix]) -> Result<(), LayerError> {
        if batch.is_empty() {
            return Err(LayerError::EmptyBatch);
        }
        if let Some(bad) = batch.iter().find(|x| x.dim() != self.dim()) {
            return Err(LayerError::DimensionMismatch {
                expected: self.dim(),
                found: bad.dim(),
            });
        }
        Ok(())
    }

    fn normalize(&self, batch: &[SpdMatrix], centre: &Spectral) -> Normalized {
        let invsqrt = centre.map(|l| 1.0 / l.sqrt());
        let normalized: Vec<DMatrix<f64>> = batch
            .iter()
            .map(|x| {
                let y = &invsqrt * &**x * &invsqrt;
                (&y + y.transpose()) * 0.5
            })
            .collect();
        let bias = self.log_bias.as_ref().map(|b| {
            let spec = Spectral::new(b).expect("log bias is symmetric and finite");
            let half = spec.map(|l| (0.5 * l).exp());
            (spec, half)
        });
        let out = normalized
            .iter()
            .map(|y| match &bias {
                Some((_, half)) => {
                    let z = half * y * half;
                    SpdMatrix::from_trusted((&z + z.transpose()) * 0.5)
                }
                None => SpdMatrix::from_trusted(y.clone()),
            })
            .collect();
        (invsqrt, normalized, bias, out)
    }

    /// Inference-mode map using the running mean; does not touch any state.
    pub fn apply(&self, batch: &[SpdMatrix]) -> Result<Vec<SpdMatrix>, LayerError> {
        self.check_batch(batch)?;
        let centre = self.running_mean.spectral()?;
        Ok(self.normalize(batch, &centre).3)
    }

    /// In training mode computes the batch Karcher mean, moves the running mean
    /// towards it along the geodesic, and centres the batch at the identity.
    pub fn forward(&mut self, batch: &[SpdMatrix], training: bool) -> Result<Vec<SpdMatrix>, LayerError> {
        self.check_batch(batch)?;
        let (centre, steps) = if training {
            let refs: Vec<&DMatrix<f64>> = batch.iter().map(|x| &**x).collect();
            let trace = karcher_trace(&refs, self.karcher, true)?;
            let centre = Spectral::new(&trace.mean)?;
            SpdMatrix::check_spectrum(&centre)?;
            self.running_mean = geodesic(&self.running_mean, &trace.mean, 1.0 - self.momentum)?;
            (centre, Some(trace.steps))
        } else {
            (self.running_mean.spectral()?, None)
        };
        let (invsqrt, normalized, bias, out) = self.normalize(batch, &centre);
        self.cache = Some(Box::new(RbnCache {
            inputs: batch.iter().map(|x| (**x).clone()).collect(),
            steps,
            centre,
            invsqrt,
            normalized,
            bias,
        }));
        Ok(out)
    }

    pub fn backward(&self, upstream: &[DMatrix<f64>]) -> Result<RbnGradients, LayerError> {
        let cache = self.cache.as_ref().ok_or(LayerError::MissingForwardCache)?;
        let n = cache.inputs.len();
        if upstream.len() != n {
            return Err(LayerError::BatchMismatch(n, upstream.len()));
        }
        let sym = |g: &DMatrix<f64>| (g + g.transpose()) * 0.5;

        // Bias congruence Z = B·Y·B with B = exp(S/2).
        let mut log_bias_grad = None;
        let y_grads: Vec<DMatrix<f64>> = match &cache.bias {
            Some((spec, half)) => {
                let mut half_grad = DMatrix::zeros(half.nrows(), half.ncols());
                let grads = upstream
                    .iter()
                    .zip(&cache.normalized)
                    .map(|(g, y)| {
                        let g = sym(g);
                        half_grad += &g * half * y + y * half * &g;
                        half * g * half
                    })
                    .collect();
                log_bias_grad = Some(spec.backward(|l| (0.5 * l).exp(), |l| 0.5 * (0.5 * l).exp(), &half_grad));
                grads
            }
            None => upstream.iter().map(sym).collect(),
        };

        // Y_i = Q·X_i·Q with Q = centre^{-1/2}.
        let q = &cache.invsqrt;
        let mut input_grads: Vec<DMatrix<f64>> = y_grads.iter().map(|g| q * g * q).collect();
        let Some(steps) = &cache.steps else {
            return Ok(RbnGradients {
                inputs: input_grads,
                log_bias: log_bias_grad,
            });
        };
        let mut q_grad = DMatrix::zeros(q.nrows(), q.ncols());
        for (g, x) in y_grads.iter().zip(&cache.inputs) {
            q_grad += g * q * x + x * q * g;
        }
        let mut centre_grad = cache
            .centre
            .backward(|l| 1.0 / l.sqrt(), |l| -0.5 * l.powf(-1.5), &q_grad);

        // Reverse through G_{k+1} = P·exp(t·S)·P, P = G_k^{1/2},
        // S = mean_i log(Q_k·X_i·Q_k), Q_k = G_k^{-1/2}.
        for step in steps.iter().rev() {
            let t = step.step;
            let p = &step.sqrt;
            let e = step.mean_log.map(|l| (t * l).exp());
            let p_grad = &centre_grad * p * &e + &e * p * &centre_grad;
            let e_grad = p * &centre_grad * p;
            let s_grad = step
                .mean_log
                .backward(|l| (t * l).exp(), |l| t * (t * l).exp(), &e_grad)
                / n as f64;
            let qt = &step.invsqrt;
            let mut qt_grad = DMatrix::zeros(qt.nrows(), qt.ncols());
            for ((spec, x), xg) in step.whitened.iter().zip(&cache.inputs).zip(&mut input_grads) {
                let a_grad = spec.backward(f64::ln, |l| 1.0 / l, &s_grad);
                *xg += qt * &a_grad * qt;
                qt_grad += &a_grad * qt * x + x * qt * &a_grad;
            }
            centre_grad = step.point.backward(f64::sqrt, |l| 0.5 / l.sqrt(), &p_grad)
                + step
                    .point
                    .backward(|l| 1.0 / l.sqrt(), |l| -0.5 * l.powf(-1.5), &qt_grad);
        }
        // G_0 is the arithmetic mean.
        let share = centre_grad / n as f64;
        for xg in &mut input_grads {
            *xg += &share;
            *xg = sym(xg);
        }
        Ok(RbnGradients {
            inputs: input_grads,
            log_bias: log_bias_grad,
        })
    }

    pub fn step_bias(&mut self, grad: &DMatrix<f64>, rate: f64) {
        if let Some(b) = &mut self.log_bias {
            *b -= grad * rate;
            let sym = (&*b + b.transpose()) * 0.5;
            *b = sym;
        }
    }
}

/// Point at fraction `t` along the geodesic from `a` to `b`:
/// `a^{1/2}·(a^{-1/2}·b·a^{-1/2})^t·a^{1/2}`.
pub fn geodesic(a: &SpdMatrix, b: &DMatrix<f64>, t: f64) -> Result<SpdMatrix, LayerError> {
    let spec = a.spectral()?;
    let sqrt = spec.map(f64::sqrt);
    let invsqrt = spec.map(|l| 1.0 / l.sqrt());
    let inner = Spectral::new(&(&invsqrt * b * &invsqrt))?;
    SpdMatrix::check_spectrum(&inner)?;
    let moved = &sqrt * inner.map(|l| l.powf(t)) * &sqrt;
    Ok(SpdMatrix::from_trusted((&moved + moved.transpose()) * 0.5))
}
