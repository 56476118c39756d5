use nalgebra::DMatrix;

use super::LayerError;
use crate::spd::{SpdMatrix, Spectral};

/// Eigenvalue rectification `U·diag(max(λ, ε))·Uᵀ`.
#[derive(Debug, Clone)]
pub struct ReEigLayer {
    epsilon: f64,
    cache: Option<Vec<Spectral>>,
}

impl PartialEq for ReEigLayer {
    fn eq(&self, other: &Self) -> bool {
        self.epsilon.to_bits() == other.epsilon.to_bits()
    }
}

impl ReEigLayer {
    pub fn new(epsilon: f64) -> Result<Self, LayerError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LayerError::InvalidParameter(format!(
                "reeig epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, cache: None })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn rectify(&self, spec: &Spectral) -> SpdMatrix {
        let eps = self.epsilon;
        let y = spec.map(|l| l.max(eps));
        SpdMatrix::from_trusted((&y + y.transpose()) * 0.5)
    }

    /// Accepts symmetric inputs with non-negative (or slightly negative)
    /// spectra; the output is always SPD.
    pub fn apply(&self, batch: &[DMatrix<f64>]) -> Result<Vec<SpdMatrix>, LayerError> {
        batch.iter().map(|x| Ok(self.rectify(&Spectral::new(x)?))).collect()
    }

    pub fn forward(&mut self, batch: &[DMatrix<f64>]) -> Result<Vec<SpdMatrix>, LayerError> {
        let specs = batch.iter().map(Spectral::new).collect::<Result<Vec<_>, _>>()?;
        let out = specs.iter().map(|s| self.rectify(s)).collect();
        self.cache = Some(specs);
        Ok(out)
    }

    /// Clamped eigenvalues receive the zero subgradient.
    pub fn backward(&self, upstream: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>, LayerError> {
        let specs = self.cache.as_ref().ok_or(LayerError::MissingForwardCache)?;
        if specs.len() != upstream.len() {
            return Err(LayerError::BatchMismatch(specs.len(), upstream.len()));
        }
        let eps = self.epsilon;
        Ok(specs
            .iter()
            .zip(upstream)
            .map(|(s, g)| s.backward(|l| l.max(eps), |l| if l > eps { 1.0 } else { 0.0 }, g))
            .collect())
    }
}
