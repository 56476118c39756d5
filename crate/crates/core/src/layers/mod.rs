//! Differentiable layers on batches of SPD matrices.
//!
//! Each layer keeps the cache of its last `forward` call; `backward` consumes it
//! and fails with [`LayerError::MissingForwardCache`] when there is none. The
//! `apply` methods are the cache-free inference path and take `&self`.

mod bimap;
mod logeig;
mod network;
mod rbn;
mod reeig;
pub mod stiefel;

use thiserror::Error;

use crate::spd::SpdError;

pub use bimap::BiMapLayer;
pub use logeig::{logeig_forward, LogEigLayer};
pub use network::{ManifoldNetwork, NetworkGradients, NetworkShape};
pub use rbn::{geodesic, RbnGradients, RbnLayer};
pub use reeig::ReEigLayer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("weight matrix is not of full row rank")]
    RankDeficientWeight,
    #[error("weight rows are not orthonormal (drift {0:e})")]
    NotOrthonormal(f64),
    #[error("backward called without a cached forward pass")]
    MissingForwardCache,
    #[error("expected matrices of dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch size mismatch: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Spd(#[from] SpdError),
}
