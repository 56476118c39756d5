use nalgebra::DMatrix;

use super::{BiMapLayer, LayerError, LogEigLayer, RbnLayer, ReEigLayer};
use crate::spd::{SpdMatrix, SymMatrix};

/// Feature extractor: `[BiMap → ReEig] × n → RBN (one per band) → LogEig`.
///
/// Batches are flat and band-major: item `i` of band `f` sits at `f * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldNetwork {
    bimaps: Vec<BiMapLayer>,
    reeigs: Vec<ReEigLayer>,
    rbn: Vec<RbnLayer>,
    logeig: LogEigLayerEq,
}

// LogEig carries no parameters, only a cache.
#[derive(Debug, Clone, Default)]
struct LogEigLayerEq(LogEigLayer);

impl PartialEq for LogEigLayerEq {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct NetworkGradients {
    pub bimap: Vec<DMatrix<f64>>,
    pub rbn_log_bias: Vec<Option<DMatrix<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub channels: usize,
    pub bands: usize,
    pub bimap_layers: usize,
    pub reeig_epsilon: f64,
    pub karcher_iterations: usize,
    pub momentum: f64,
    pub learn_bias: bool,
}

fn split_bands<T>(flat: &[T], bands: usize) -> Result<std::slice::Chunks<'_, T>, LayerError> {
    if bands == 0 || flat.is_empty() || !flat.len().is_multiple_of(bands) {
        return Err(LayerError::BatchMismatch(flat.len(), bands));
    }
    Ok(flat.chunks(flat.len() / bands))
}

impl ManifoldNetwork {
    /// Square identity BiMaps with the Stiefel constraint.
    pub fn new(shape: NetworkShape) -> Result<Self, LayerError> {
        let reeig = ReEigLayer::new(shape.reeig_epsilon)?;
        let rbn = (0..shape.bands)
            .map(|_| {
                RbnLayer::new(
                    shape.channels,
                    shape.karcher_iterations,
                    shape.momentum,
                    shape.learn_bias,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            bimaps: (0..shape.bimap_layers)
                .map(|_| BiMapLayer::identity(shape.channels))
                .collect(),
            reeigs: vec![reeig; shape.bimap_layers],
            rbn,
            logeig: LogEigLayerEq::default(),
        })
    }

    pub fn from_parts(bimaps: Vec<BiMapLayer>, reeig: ReEigLayer, rbn: Vec<RbnLayer>) -> Result<Self, LayerError> {
        for pair in bimaps.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(LayerError::DimensionMismatch {
                    expected: pair[0].output_dim(),
                    found: pair[1].input_dim(),
                });
            }
        }
        if let (Some(last), Some(first_rbn)) = (bimaps.last(), rbn.first()) {
            if last.output_dim() != first_rbn.dim() {
                return Err(LayerError::DimensionMismatch {
                    expected: last.output_dim(),
                    found: first_rbn.dim(),
                });
            }
        }
        Ok(Self {
            reeigs: vec![reeig; bimaps.len()],
            bimaps,
            rbn,
            logeig: LogEigLayerEq::default(),
        })
    }

    pub fn bimaps(&self) -> &[BiMapLayer] {
        &self.bimaps
    }

    pub fn rbn(&self) -> &[RbnLayer] {
        &self.rbn
    }

    pub fn rbn_mut(&mut self) -> &mut [RbnLayer] {
        &mut self.rbn
    }

    pub fn reeig_epsilon(&self) -> f64 {
        self.reeigs.first().map_or(1e-4, ReEigLayer::epsilon)
    }

    pub fn bands(&self) -> usize {
        self.rbn.len()
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.rbn.first().map(RbnLayer::dim)
    }

    pub fn num_parameters(&self) -> usize {
        self.bimaps.iter().map(BiMapLayer::num_parameters).sum::<usize>()
            + self.rbn.iter().map(RbnLayer::num_parameters).sum::<usize>()
    }

    /// BiMap/ReEig stack only, inference mode.
    pub fn extract(&self, flat: &[SpdMatrix]) -> Result<Vec<SpdMatrix>, LayerError> {
        let mut x = flat.to_vec();
        for (bimap, reeig) in self.bimaps.iter().zip(&self.reeigs) {
            let y = bimap.apply(&x)?;
            let raw: Vec<DMatrix<f64>> = y.into_iter().map(SpdMatrix::into_inner).collect();
            x = reeig.apply(&raw)?;
        }
        Ok(x)
    }

    /// Full inference-mode pass to tangent vectors.
    pub fn apply(&self, flat: &[SpdMatrix]) -> Result<Vec<SymMatrix>, LayerError> {
        let x = self.extract(flat)?;
        let mut normalized = Vec::with_capacity(x.len());
        for (band, layer) in split_bands(&x, self.rbn.len())?.zip(&self.rbn) {
            normalized.extend(layer.apply(band)?);
        }
        self.logeig.0.apply(&normalized)
    }

    pub fn forward(&mut self, flat: &[SpdMatrix], training: bool) -> Result<Vec<SymMatrix>, LayerError> {
        let mut x = flat.to_vec();
        for (bimap, reeig) in self.bimaps.iter_mut().zip(&mut self.reeigs) {
            let y = bimap.forward(&x)?;
            let raw: Vec<DMatrix<f64>> = y.into_iter().map(SpdMatrix::into_inner).collect();
            x = reeig.forward(&raw)?;
        }
        let bands = self.rbn.len();
        let mut normalized = Vec::with_capacity(x.len());
        for (band, layer) in split_bands(&x, bands)?.zip(&mut self.rbn) {
            normalized.extend(layer.forward(band, training)?);
        }
        self.logeig.0.forward(&normalized)
    }

    pub fn backward(&self, upstream: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, NetworkGradients), LayerError> {
        let g = self.logeig.0.backward(upstream)?;
        let mut grads = Vec::with_capacity(g.len());
        let mut rbn_log_bias = Vec::with_capacity(self.rbn.len());
        for (band, layer) in split_bands(&g, self.rbn.len())?.zip(&self.rbn) {
            let out = layer.backward(band)?;
            grads.extend(out.inputs);
            rbn_log_bias.push(out.log_bias);
        }
        let mut bimap = vec![DMatrix::zeros(0, 0); self.bimaps.len()];
        for (idx, (layer, reeig)) in self.bimaps.iter().zip(&self.reeigs).enumerate().rev() {
            let g_reeig = reeig.backward(&grads)?;
            let (g_in, g_w) = layer.backward(&g_reeig)?;
            bimap[idx] = g_w;
            grads = g_in;
        }
        Ok((grads, NetworkGradients { bimap, rbn_log_bias }))
    }

    pub fn step(&mut self, grads: &NetworkGradients, rate: f64) {
        for (layer, g) in self.bimaps.iter_mut().zip(&grads.bimap) {
            layer.step(g, rate);
        }
        for (layer, g) in self.rbn.iter_mut().zip(&grads.rbn_log_bias) {
            if let Some(g) = g {
                layer.step_bias(g, rate);
            }
        }
    }
}
