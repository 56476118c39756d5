use nalgebra::DMatrix;

use super::LayerError;
use crate::spd::{SpdMatrix, Spectral, SymMatrix};

/// Matrix logarithm, projecting SPD inputs to the tangent space at the identity.
#[derive(Debug, Clone, Default)]
pub struct LogEigLayer {
    cache: Option<Vec<Spectral>>,
}

fn log_of(spec: &Spectral) -> SymMatrix {
    SymMatrix::symmetrize(spec.map(f64::ln))
}

fn spectrum(x: &SpdMatrix) -> Result<Spectral, LayerError> {
    let spec = x.spectral()?;
    SpdMatrix::check_spectrum(&spec)?;
    Ok(spec)
}

impl LogEigLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&self, batch: &[SpdMatrix]) -> Result<Vec<SymMatrix>, LayerError> {
        batch.iter().map(|x| Ok(log_of(&spectrum(x)?))).collect()
    }

    pub fn forward(&mut self, batch: &[SpdMatrix]) -> Result<Vec<SymMatrix>, LayerError> {
        let specs = batch.iter().map(spectrum).collect::<Result<Vec<_>, _>>()?;
        let out = specs.iter().map(log_of).collect();
        self.cache = Some(specs);
        Ok(out)
    }

    pub fn backward(&self, upstream: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>, LayerError> {
        let specs = self.cache.as_ref().ok_or(LayerError::MissingForwardCache)?;
        if specs.len() != upstream.len() {
            return Err(LayerError::BatchMismatch(specs.len(), upstream.len()));
        }
        Ok(specs
            .iter()
            .zip(upstream)
            .map(|(s, g)| s.backward(f64::ln, |l| 1.0 / l, g))
            .collect())
    }
}

/// Stateless batch logarithm.
pub fn logeig_forward(batch: &[SpdMatrix]) -> Result<Vec<SymMatrix>, LayerError> {
    LogEigLayer::new().apply(batch)
}
