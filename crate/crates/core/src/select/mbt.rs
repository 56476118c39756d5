use nalgebra::DMatrix;

use super::SelectError;
use crate::layers::stiefel;
use crate::random::{random_stiefel, rng};

/// `K` bilinear heads `V ↦ W_kᵀ V W_k`, each `W_k` an `M × m` matrix with
/// orthonormal columns. The first `frozen` heads are not updated by [`MbtHeads::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct MbtHeads {
    heads: Vec<DMatrix<f64>>,
    frozen: usize,
}

#[derive(Debug, Clone)]
pub struct MbtGradients {
    pub inputs: Vec<DMatrix<f64>>,
    /// Riemannian gradients; zero for frozen heads.
    pub heads: Vec<DMatrix<f64>>,
}

impl MbtHeads {
    /// `first` followed by `k − 1` random orthonormal heads drawn from `seed`.
    /// The first head is frozen.
    pub fn new(first: DMatrix<f64>, k: usize, seed: u64) -> Result<Self, SelectError> {
        if k == 0 {
            return Err(SelectError::ShapeMismatch("need at least one head".into()));
        }
        let (dim, m) = first.shape();
        let mut r = rng(seed);
        let mut heads = vec![first];
        heads.extend((1..k).map(|_| random_stiefel(dim, m, &mut r)));
        Self::from_heads(heads, 1)
    }

    pub fn from_heads(heads: Vec<DMatrix<f64>>, frozen: usize) -> Result<Self, SelectError> {
        let shape = heads
            .first()
            .ok_or_else(|| SelectError::ShapeMismatch("need at least one head".into()))?
            .shape();
        if shape.1 == 0 || shape.1 > shape.0 {
            return Err(SelectError::InvalidSubspace {
                m: shape.1,
                dim: shape.0,
            });
        }
        for h in &heads {
            if h.shape() != shape {
                return Err(SelectError::ShapeMismatch(format!(
                    "head {:?} among {shape:?}",
                    h.shape()
                )));
            }
            let drift = stiefel::drift(h);
            if drift.is_nan() || drift >= 1e-8 {
                return Err(SelectError::NotOrthonormal(drift));
            }
        }
        Ok(Self {
            frozen: frozen.min(heads.len()),
            heads,
        })
    }

    pub fn heads(&self) -> &[DMatrix<f64>] {
        &self.heads
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn frozen(&self) -> usize {
        self.frozen
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.heads[0].ncols()
    }

    pub fn num_parameters(&self) -> usize {
        self.heads.iter().map(|h| h.len()).sum()
    }

    /// All heads applied to one tangent matrix, in head order.
    pub fn apply(&self, v: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.heads.iter().map(|w| w.transpose() * v * w).collect()
    }

    /// Gradients given the forward inputs and, per input, one upstream
    /// gradient per head.
    pub fn backward(
        &self,
        inputs: &[DMatrix<f64>],
        upstream: &[Vec<DMatrix<f64>>],
    ) -> Result<MbtGradients, SelectError> {
        if inputs.len() != upstream.len() {
            return Err(SelectError::ShapeMismatch(format!(
                "{} inputs, {} upstream gradients",
                inputs.len(),
                upstream.len()
            )));
        }
        let (dim, m) = self.heads[0].shape();
        let mut heads = vec![DMatrix::zeros(dim, m); self.k()];
        let mut grads = Vec::with_capacity(inputs.len());
        for (v, up) in inputs.iter().zip(upstream) {
            if up.len() != self.k() {
                return Err(SelectError::ShapeMismatch(format!(
                    "{} head gradients for {} heads",
                    up.len(),
                    self.k()
                )));
            }
            let mut gv = DMatrix::zeros(dim, dim);
            for (k, (w, g)) in self.heads.iter().zip(up).enumerate() {
                let gs = (g + g.transpose()) * 0.5;
                gv += w * &gs * w.transpose();
                if k >= self.frozen {
                    heads[k] += v * w * &gs * 2.0;
                }
            }
            grads.push(gv);
        }
        for (w, g) in self.heads.iter().zip(heads.iter_mut()) {
            *g = stiefel::project_tangent(w, g);
        }
        Ok(MbtGradients { inputs: grads, heads })
    }

    /// Retraction step on every unfrozen head.
    pub fn step(&mut self, grads: &[DMatrix<f64>], rate: f64) {
        for (w, g) in self.heads.iter_mut().zip(grads).skip(self.frozen) {
            *w = stiefel::retract(w, g, rate);
        }
    }
}

/// Applies every head to every input; `out[i][k]` is head `k` on input `i`.
pub fn mbt_apply(heads: &MbtHeads, batch: &[DMatrix<f64>]) -> Vec<Vec<DMatrix<f64>>> {
    batch.iter().map(|v| heads.apply(v)).collect()
}
