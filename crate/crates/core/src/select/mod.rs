//! Geometry-aware channel selection and multi-bilinear heads.
//!
//! The selection transform `Ŵ` maximizes `tr(Wᵀ𝓛W)` under `WᵀW = I_m`, where
//! `𝓛` couples the double-centred geodesic distances of the input samples with
//! the tangent-space differences they induce. The problem is solved by
//! alternating between assembling `𝓛` at the current `W` and taking its top
//! eigenvectors.

mod distance;
mod fit;
mod mbt;

use thiserror::Error;

use crate::spd::SpdError;

pub use distance::{gamma, geodesic_matrix, tangent_distance_matrix, tangent_distance_matrix_from_logs};
pub use fit::{
    ascent_shift, assemble_l, assemble_l_from_logs, fit_selection, objective, update_w, ChannelRule, SelectionOptions,
    SelectionTransform,
};
pub use mbt::{mbt_apply, MbtGradients, MbtHeads};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("cannot select {m} of {dim} channels")]
    InvalidSubspace { m: usize, dim: usize },
    #[error("matrix dimensions disagree: {0}")]
    ShapeMismatch(String),
    #[error("transform columns are not orthonormal (drift {0:e})")]
    NotOrthonormal(f64),
    #[error("objective decreased at iteration {iteration}: {previous} -> {current}")]
    ConvergenceFailure {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error(transparent)]
    Spd(#[from] SpdError),
}
