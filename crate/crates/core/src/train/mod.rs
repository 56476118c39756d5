//! End-to-end training, evaluation and benchmarking.

mod config;
mod eval;
mod model;
mod optim;
mod trainer;

use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::filter::FilterError;
use crate::io::IoError;
use crate::layers::LayerError;
use crate::select::SelectError;
use crate::spd::SpdError;

pub use config::{ConfigError, Optimizer, StdDivisor, TrainConfig, CONFIG_KEYS};
pub use eval::{
    bench_inference, evaluate_cv, evaluate_holdout, stratified_folds, EvalReport, FoldReport, LatencyStats,
};
pub use model::{
    count_parameters, initial_network, prepare, select_channels, selection_samples, trial_covariances, DataShape,
    Model, ModelGradients, PreparedTrial,
};
pub use trainer::{fit_channel_selection, train, train_prepared, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("train and evaluation sets disagree: {0}")]
    SchemaMismatch(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Independent stream seeds derived from the configured seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
