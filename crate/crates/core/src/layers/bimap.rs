use nalgebra::DMatrix;

use super::{stiefel, LayerError};
use crate::spd::{SpdMatrix, Spectral};

/// Bilinear map `X ↦ W·X·Wᵀ` with `W` of shape `m_out × m_in`, full row rank.
#[derive(Debug, Clone)]
pub struct BiMapLayer {
    weight: DMatrix<f64>,
    enforce_orthonormal: bool,
    cache: Option<Vec<DMatrix<f64>>>,
}

impl PartialEq for BiMapLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.enforce_orthonormal == other.enforce_orthonormal
    }
}

const ORTHONORMAL_TOL: f64 = 1e-8;

impl BiMapLayer {
    pub fn new(weight: DMatrix<f64>, enforce_orthonormal: bool) -> Result<Self, LayerError> {
        let (m_out, m_in) = weight.shape();
        if m_out == 0 || m_out > m_in {
            return Err(LayerError::ShapeMismatch(format!(
                "bimap weight {m_out}x{m_in} must have 0 < m_out <= m_in"
            )));
        }
        if !weight.iter().all(|v| v.is_finite()) {
            return Err(LayerError::RankDeficientWeight);
        }
        let gram = &weight * weight.transpose();
        let spec = Spectral::new(&gram)?;
        if !(spec.max() > 0.0 && spec.min() > 1e-12 * spec.max()) {
            return Err(LayerError::RankDeficientWeight);
        }
        if enforce_orthonormal && stiefel::drift(&weight.transpose()) > ORTHONORMAL_TOL {
            return Err(LayerError::NotOrthonormal(stiefel::drift(&weight.transpose())));
        }
        Ok(Self {
            weight,
            enforce_orthonormal,
            cache: None,
        })
    }

    /// Square identity map, the default initialization inside the network.
    pub fn identity(n: usize) -> Self {
        Self {
            weight: DMatrix::identity(n, n),
            enforce_orthonormal: true,
            cache: None,
        }
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn enforces_orthonormal(&self) -> bool {
        self.enforce_orthonormal
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_parameters(&self) -> usize {
        self.weight.len()
    }

    pub fn apply(&self, batch: &[SpdMatrix]) -> Result<Vec<SpdMatrix>, LayerError> {
        batch
            .iter()
            .map(|x| {
                if x.dim() != self.input_dim() {
                    return Err(LayerError::DimensionMismatch {
                        expected: self.input_dim(),
                        found: x.dim(),
                    });
                }
                let y = &self.weight * &**x * self.weight.transpose();
                Ok(SpdMatrix::from_trusted((&y + y.transpose()) * 0.5))
            })
            .collect()
    }

    pub fn forward(&mut self, batch: &[SpdMatrix]) -> Result<Vec<SpdMatrix>, LayerError> {
        let out = self.apply(batch)?;
        self.cache = Some(batch.iter().map(|x| (**x).clone()).collect());
        Ok(out)
    }

    /// Returns per-input gradients and the weight gradient summed over the
    /// batch. With the orthonormal constraint the weight gradient is the
    /// Riemannian one (projected onto the Stiefel tangent space of `Wᵀ`).
    pub fn backward(&self, upstream: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>), LayerError> {
        let inputs = self.cache.as_ref().ok_or(LayerError::MissingForwardCache)?;
        if inputs.len() != upstream.len() {
            return Err(LayerError::BatchMismatch(inputs.len(), upstream.len()));
        }
        let w = &self.weight;
        let mut grad_w = DMatrix::zeros(w.nrows(), w.ncols());
        let grads = inputs
            .iter()
            .zip(upstream)
            .map(|(x, g)| {
                let g = (g + g.transpose()) * 0.5;
                grad_w += &g * w * x * 2.0;
                w.transpose() * g * w
            })
            .collect();
        if self.enforce_orthonormal {
            let projected = stiefel::project_tangent(&w.transpose(), &grad_w.transpose());
            grad_w = projected.transpose();
        }
        Ok((grads, grad_w))
    }

    /// Gradient step; a QR retraction when the weight is constrained.
    pub fn step(&mut self, grad: &DMatrix<f64>, rate: f64) {
        if self.enforce_orthonormal {
            self.weight = stiefel::retract(&self.weight.transpose(), &grad.transpose(), rate).transpose();
        } else {
            self.weight -= grad * rate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_spd, random_stiefel, random_sym, rng};

    #[test]
    fn identity_weight_is_noop() {
        let mut r = rng(1);
        let x = random_spd(4, &mut r);
        let y = BiMapLayer::identity(4).apply(std::slice::from_ref(&x)).unwrap();
        assert!((&*y[0] - &*x).norm() < 1e-15);
    }

    #[test]
    fn selection_weight_extracts_leading_block() {
        let mut r = rng(2);
        let x = random_spd(5, &mut r);
        let w = DMatrix::from_fn(3, 5, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = BiMapLayer::new(w, true)
            .unwrap()
            .apply(std::slice::from_ref(&x))
            .unwrap();
        assert_eq!(*y[0], x.view((0, 0), (3, 3)).into_owned());
    }

    #[test]
    fn orthonormal_rows_preserve_spd() {
        let mut r = rng(3);
        for _ in 0..100 {
            let w = random_stiefel(8, 4, &mut r).transpose();
            let layer = BiMapLayer::new(w, true).unwrap();
            let batch: Vec<_> = (0..3).map(|_| random_spd(8, &mut r)).collect();
            for y in layer.apply(&batch).unwrap() {
                SpdMatrix::new(y.into_inner()).unwrap();
            }
        }
    }

    #[test]
    fn rank_deficient_weight_rejected() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(BiMapLayer::new(w, false), Err(LayerError::RankDeficientWeight));
    }

    #[test]
    fn backward_requires_forward() {
        let layer = BiMapLayer::identity(3);
        assert_eq!(
            layer.backward(&[DMatrix::zeros(3, 3)]).unwrap_err(),
            LayerError::MissingForwardCache
        );
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(5);
        let mut layer = BiMapLayer::identity(4);
        let x = random_spd(4, &mut r);
        layer.forward(std::slice::from_ref(&x)).unwrap();
        let (gx, gw) = layer.backward(&[DMatrix::zeros(4, 4)]).unwrap();
        assert_eq!(gx[0].norm(), 0.0);
        assert_eq!(gw.norm(), 0.0);
    }

    #[test]
    fn retraction_steps_hold_constraint() {
        let mut r = rng(6);
        let mut layer = BiMapLayer::new(random_stiefel(6, 3, &mut r).transpose(), true).unwrap();
        for _ in 0..100 {
            let x = random_spd(6, &mut r);
            layer.forward(std::slice::from_ref(&x)).unwrap();
            let (_, gw) = layer.backward(&[random_sym(3, &mut r)]).unwrap();
            layer.step(&gw, 0.05);
        }
        assert!(stiefel::drift(&layer.weight().transpose()) < 1e-8);
    }
}
