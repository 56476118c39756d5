use nalgebra::{DMatrix, DVector};

use super::{derive_seed, TrainConfig, TrainError};
use crate::classifier::{
    inverse_reshape, loss, loss_gradient, reshape_features, ClassifierGradients, ClassifierShape, TangentClassifier,
};
use crate::filter::{FilterBank, TrialTensor};
use crate::io::RawTrialSet;
use crate::layers::{ManifoldNetwork, NetworkGradients, NetworkShape};
use crate::select::{fit_selection, MbtHeads, SelectionOptions, SelectionTransform};
use crate::spd::{karcher_mean, shrunk_covariance, KarcherOptions, SpdMatrix, SpdTensor};

const HEAD_STREAM: u64 = 1;
const CLASSIFIER_STREAM: u64 = 2;

/// Dimensions of the data a model was built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataShape {
    pub channels: usize,
    pub classes: usize,
    pub samples_per_trial: usize,
    pub sample_rate_hz: f32,
    pub windows: usize,
    pub bands: usize,
}

impl DataShape {
    pub fn of(config: &TrainConfig, trials: &RawTrialSet) -> Self {
        Self {
            channels: trials.channels(),
            classes: trials.n_classes(),
            samples_per_trial: trials.samples_per_trial(),
            sample_rate_hz: trials.sample_rate_hz(),
            windows: trials.samples_per_trial() / config.window_len,
            bands: config.bands.len(),
        }
    }
}

/// One trial reduced to its `S × F` covariance tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrial {
    pub label: usize,
    pub covs: SpdTensor,
}

/// Shrunk covariance of every `(window, band)` slice.
pub fn trial_covariances(tensor: &TrialTensor, shrinkage: f64) -> Result<SpdTensor, TrainError> {
    let mut mats = Vec::with_capacity(tensor.windows() * tensor.bands());
    for s in 0..tensor.windows() {
        for f in 0..tensor.bands() {
            mats.push(shrunk_covariance(&tensor.window(s, f), shrinkage)?);
        }
    }
    Ok(SpdTensor::new(tensor.windows(), tensor.bands(), mats)?)
}

/// Filters, windows and reduces every trial to covariances.
pub fn prepare(config: &TrainConfig, trials: &RawTrialSet) -> Result<Vec<PreparedTrial>, TrainError> {
    let bank = FilterBank::new(&config.bands, trials.sample_rate_hz() as f64)?;
    trials
        .trials()
        .iter()
        .map(|t| {
            let tensor = bank.segment_trial(&t.data, trials.channels(), config.window_len)?;
            Ok(PreparedTrial {
                label: t.label as usize,
                covs: trial_covariances(&tensor, config.shrinkage)?,
            })
        })
        .collect()
}

/// Band-major flattening: item `(f, t, s)` sits at `f·(n·S) + t·S + s`.
fn flatten(batch: &[&PreparedTrial], windows: usize, bands: usize) -> Vec<SpdMatrix> {
    let mut flat = Vec::with_capacity(bands * batch.len() * windows);
    for f in 0..bands {
        for t in batch {
            for s in 0..windows {
                flat.push(t.covs.get(s, f).clone());
            }
        }
    }
    flat
}

/// Samples for channel selection: every training covariance passed through
/// the BiMap/ReEig stack and centred per band at its Karcher mean, grouped by
/// `label·F + band`. The per-band means become the RBN running means.
pub fn selection_samples(
    network: &mut ManifoldNetwork,
    data: &[PreparedTrial],
    windows: usize,
    karcher_iterations: usize,
) -> Result<(Vec<SpdMatrix>, Vec<usize>), TrainError> {
    let bands = network.bands();
    let refs: Vec<&PreparedTrial> = data.iter().collect();
    let extracted = network.extract(&flatten(&refs, windows, bands))?;
    let per_band = data.len() * windows;
    let opts = KarcherOptions {
        iterations: karcher_iterations,
        ..KarcherOptions::default()
    };
    let mut samples = Vec::with_capacity(extracted.len());
    let mut groups = Vec::with_capacity(extracted.len());
    for (f, chunk) in extracted.chunks(per_band).enumerate() {
        let mean = karcher_mean(chunk, opts)?.mean;
        let rbn = &mut network.rbn_mut()[f];
        rbn.set_running_mean(mean)?;
        samples.extend(rbn.apply(chunk)?);
        groups.extend((0..per_band).map(|i| data[i / windows].label * bands + f));
    }
    Ok((samples, groups))
}

/// Untrained feature extractor: identity BiMaps, identity running means.
pub fn initial_network(config: &TrainConfig, shape: DataShape) -> Result<ManifoldNetwork, TrainError> {
    Ok(ManifoldNetwork::new(NetworkShape {
        channels: shape.channels,
        bands: shape.bands,
        bimap_layers: config.bimap_layers,
        reeig_epsilon: config.reeig_eps,
        karcher_iterations: config.karcher_iterations,
        momentum: config.rbn_momentum,
        learn_bias: config.rbn_bias,
    })?)
}

/// Fits the selection transform on training data through `network`; also
/// sets the network's running means (see [`selection_samples`]).
pub fn select_channels(
    config: &TrainConfig,
    network: &mut ManifoldNetwork,
    data: &[PreparedTrial],
    windows: usize,
) -> Result<SelectionTransform, TrainError> {
    let (samples, groups) = selection_samples(network, data, windows, config.karcher_iterations)?;
    Ok(fit_selection(
        &samples,
        Some(&groups),
        SelectionOptions {
            m: config.m,
            max_iters: config.selection_max_iters,
            tol: config.selection_tol,
            rule: config.selection_rule,
            safeguard: config.selection_safeguard,
        },
    )?)
}

/// A trained pipeline: channel selection, feature extractor, heads and
/// classifier, plus the configuration and data shape it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub shape: DataShape,
    pub selection: SelectionTransform,
    pub network: ManifoldNetwork,
    pub heads: MbtHeads,
    pub classifier: TangentClassifier,
}

#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub network: NetworkGradients,
    pub heads: Vec<DMatrix<f64>>,
    pub classifier: ClassifierGradients,
}

/// Scalar learnable parameters across BiMaps, RBN biases, heads and classifier.
pub fn count_parameters(model: &Model) -> usize {
    model.num_parameters()
}

impl Model {
    /// Fresh model: identity BiMaps, channel selection fitted on `data`, the
    /// selection transform as the first (frozen) head, random other heads and
    /// classifier.
    pub fn initialize(config: &TrainConfig, shape: DataShape, data: &[PreparedTrial]) -> Result<Self, TrainError> {
        if config.m > shape.channels {
            return Err(TrainError::InvalidConfig(format!(
                "m = {} exceeds the {} available channels",
                config.m, shape.channels
            )));
        }
        if shape.windows == 0 {
            return Err(TrainError::InvalidConfig(format!(
                "window_len {} exceeds the {} samples per trial",
                config.window_len, shape.samples_per_trial
            )));
        }
        let mut network = initial_network(config, shape)?;
        let selection = select_channels(config, &mut network, data, shape.windows)?;
        let heads = MbtHeads::new(
            selection.w_hat.clone(),
            config.heads,
            derive_seed(config.seed, HEAD_STREAM),
        )?;
        let classifier = TangentClassifier::new(
            ClassifierShape {
                bands: shape.bands,
                windows: shape.windows,
                heads: config.heads,
                m: config.m,
                conv_maps: config.conv_maps,
                classes: shape.classes,
            },
            derive_seed(config.seed, CLASSIFIER_STREAM),
        )?;
        Ok(Self {
            config: config.clone(),
            shape,
            selection,
            network,
            heads,
            classifier,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.network.num_parameters() + self.heads.num_parameters() + self.classifier.num_parameters()
    }

    fn stacked(&self, tangents: &[DMatrix<f64>], n: usize, t: usize) -> Vec<DMatrix<f64>> {
        let (windows, bands) = (self.shape.windows, self.shape.bands);
        let mut stacked = Vec::with_capacity(windows * bands * self.heads.k());
        for s in 0..windows {
            for f in 0..bands {
                stacked.extend(self.heads.apply(&tangents[f * n * windows + t * windows + s]));
            }
        }
        stacked
    }

    /// Inference-mode logits for prepared trials.
    pub fn logits(&self, batch: &[&PreparedTrial]) -> Result<Vec<DVector<f64>>, TrainError> {
        let (windows, bands) = (self.shape.windows, self.shape.bands);
        let tangents: Vec<DMatrix<f64>> = self
            .network
            .apply(&flatten(batch, windows, bands))?
            .into_iter()
            .map(|v| v.into_inner())
            .collect();
        (0..batch.len())
            .map(|t| {
                let fmap = reshape_features(&self.stacked(&tangents, batch.len(), t), windows, bands, self.heads.k())?;
                Ok(self.classifier.forward(fmap)?.logits)
            })
            .collect()
    }

    pub fn predict_prepared(&self, batch: &[&PreparedTrial]) -> Result<Vec<usize>, TrainError> {
        Ok(self.logits(batch)?.iter().map(|l| l.argmax().0).collect())
    }

    /// Full pipeline for one raw channel-major trial.
    pub fn predict_one(&self, bank: &FilterBank, data: &[f32]) -> Result<usize, TrainError> {
        let tensor = bank.segment_trial(data, self.shape.channels, self.config.window_len)?;
        let trial = PreparedTrial {
            label: 0,
            covs: trial_covariances(&tensor, self.config.shrinkage)?,
        };
        Ok(self.predict_prepared(&[&trial])?[0])
    }

    pub fn filter_bank(&self) -> Result<FilterBank, TrainError> {
        Ok(FilterBank::new(&self.config.bands, self.shape.sample_rate_hz as f64)?)
    }

    pub fn predict(&self, trials: &RawTrialSet) -> Result<Vec<usize>, TrainError> {
        let data = prepare(&self.config, trials)?;
        let refs: Vec<&PreparedTrial> = data.iter().collect();
        self.predict_prepared(&refs)
    }

    /// Training-mode forward and backward over one batch; returns the mean
    /// cross-entropy and its gradients. Updates the RBN running means.
    pub fn gradients(&mut self, batch: &[&PreparedTrial]) -> Result<(f64, ModelGradients), TrainError> {
        let (windows, bands, k) = (self.shape.windows, self.shape.bands, self.heads.k());
        let n = batch.len();
        let tangents: Vec<DMatrix<f64>> = self
            .network
            .forward(&flatten(batch, windows, bands), true)?
            .into_iter()
            .map(|v| v.into_inner())
            .collect();

        let mut total = 0.0;
        let mut clf_grads = ClassifierGradients::zeros(&self.classifier.shape);
        let mut head_upstream = vec![Vec::new(); tangents.len()];
        for (t, trial) in batch.iter().enumerate() {
            let fmap = reshape_features(&self.stacked(&tangents, n, t), windows, bands, k)?;
            let fwd = self.classifier.forward(fmap)?;
            total += loss(&fwd.logits, trial.label)?;
            let d_logits = loss_gradient(&fwd.logits, trial.label)? / n as f64;
            let (g, d_fmap) = self.classifier.backward(&fwd, &d_logits);
            clf_grads.accumulate(&g);
            let mut per_head = inverse_reshape(&d_fmap, k)?.into_iter();
            for s in 0..windows {
                for f in 0..bands {
                    head_upstream[f * n * windows + t * windows + s] = per_head.by_ref().take(k).collect();
                }
            }
        }
        let mbt = self.heads.backward(&tangents, &head_upstream)?;
        let (_, network) = self.network.backward(&mbt.inputs)?;
        Ok((
            total / n as f64,
            ModelGradients {
                network,
                heads: mbt.heads,
                classifier: clf_grads,
            },
        ))
    }
}
