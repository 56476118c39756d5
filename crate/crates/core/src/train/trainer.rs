use rand::seq::SliceRandom;

use super::model::{initial_network, prepare, select_channels, DataShape, Model, PreparedTrial};
use super::optim::OptimizerState;
use super::{derive_seed, TrainConfig, TrainError};
use crate::io::RawTrialSet;
use crate::random::rng;
use crate::select::SelectionTransform;

const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Inference-mode accuracy on the training set after the last epoch.
    pub train_accuracy: f64,
}

pub(crate) fn check_data(config: &TrainConfig, trials: &RawTrialSet) -> Result<(), TrainError> {
    config.validate().map_err(TrainError::InvalidConfig)?;
    if trials.len() < 2 {
        return Err(TrainError::InsufficientData(format!(
            "{} trials, need at least 2",
            trials.len()
        )));
    }
    if config.m > trials.channels() {
        return Err(TrainError::InvalidConfig(format!(
            "m = {} exceeds the {} recorded channels",
            config.m,
            trials.channels()
        )));
    }
    Ok(())
}

/// Builds and trains a model on `trials`.
pub fn train(config: &TrainConfig, trials: &RawTrialSet) -> Result<(Model, TrainReport), TrainError> {
    check_data(config, trials)?;
    let data = prepare(config, trials)?;
    train_prepared(config, DataShape::of(config, trials), &data)
}

/// Same as [`train`] for trials already reduced to covariances.
pub fn train_prepared(
    config: &TrainConfig,
    shape: DataShape,
    data: &[PreparedTrial],
) -> Result<(Model, TrainReport), TrainError> {
    if data.len() < 2 {
        return Err(TrainError::InsufficientData(format!(
            "{} trials, need at least 2",
            data.len()
        )));
    }
    let mut model = Model::initialize(config, shape, data)?;
    let mut optim = OptimizerState::new(config.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng(derive_seed(config.seed, SHUFFLE_STREAM));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedTrial> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = model.gradients(&batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            total += loss * batch.len() as f64;
            optim.update(&mut model, grads, config.learning_rate);
        }
        epoch_losses.push(total / data.len() as f64);
    }

    let refs: Vec<&PreparedTrial> = data.iter().collect();
    let predicted = model.predict_prepared(&refs)?;
    let correct = predicted.iter().zip(data).filter(|(p, t)| **p == t.label).count();
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy: correct as f64 / data.len() as f64,
        },
    ))
}

/// The channel-selection step of [`train`] on its own.
pub fn fit_channel_selection(config: &TrainConfig, trials: &RawTrialSet) -> Result<SelectionTransform, TrainError> {
    check_data(config, trials)?;
    let shape = DataShape::of(config, trials);
    if shape.windows == 0 {
        return Err(TrainError::InvalidConfig(format!(
            "window_len {} exceeds the {} samples per trial",
            config.window_len, shape.samples_per_trial
        )));
    }
    let data = prepare(config, trials)?;
    let mut network = initial_network(config, shape)?;
    select_channels(config, &mut network, &data, shape.windows)
}
