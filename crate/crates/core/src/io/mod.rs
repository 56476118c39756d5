//! Trial data and model persistence.
//!
//! Both binary formats are little-endian and end in a CRC-32 (IEEE) of every
//! byte that precedes it. Decoders validate the header, the exact payload size
//! and the checksum before materializing anything, so a rejected file never
//! yields a partially built value.

mod bundle;
mod bytes;
mod csv;
mod eegb;

use thiserror::Error;

pub use bundle::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use csv::{load_csv_trial, parse_csv_trial, trials_from_csv};
pub use eegb::{load_trials, save_trials, trials_from_bytes, trials_to_bytes, EEGB_MAGIC, EEGB_VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("payload size mismatch: header declares {declared} bytes, file has {actual}")]
    DimensionMismatch { declared: u64, actual: u64 },
    #[error("non-finite sample in trial {trial} at offset {offset}")]
    NonFiniteValue { trial: usize, offset: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("label {label} in trial {trial} is outside 0..{classes}")]
    InvalidLabel { trial: usize, label: u32, classes: u32 },
    #[error("malformed content: {0}")]
    Malformed(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// One labelled trial; `data` is channel-major (`M × samples`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub label: u32,
    pub data: Vec<f32>,
}

/// A validated set of equally shaped, labelled trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrialSet {
    sample_rate_hz: f32,
    channels: usize,
    samples_per_trial: usize,
    n_classes: usize,
    trials: Vec<Trial>,
}

impl RawTrialSet {
    pub fn new(
        sample_rate_hz: f32,
        channels: usize,
        samples_per_trial: usize,
        n_classes: usize,
        trials: Vec<Trial>,
    ) -> Result<Self, IoError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(IoError::MalformedHeader(format!("sample rate {sample_rate_hz}")));
        }
        if channels == 0 || samples_per_trial == 0 {
            return Err(IoError::MalformedHeader(format!(
                "{channels} channels x {samples_per_trial} samples"
            )));
        }
        if n_classes < 2 {
            return Err(IoError::MalformedHeader(format!(
                "{n_classes} classes, need at least 2"
            )));
        }
        let per_trial = channels * samples_per_trial;
        for (i, t) in trials.iter().enumerate() {
            if t.data.len() != per_trial {
                return Err(IoError::DimensionMismatch {
                    declared: per_trial as u64,
                    actual: t.data.len() as u64,
                });
            }
            if t.label as usize >= n_classes {
                return Err(IoError::InvalidLabel {
                    trial: i,
                    label: t.label,
                    classes: n_classes as u32,
                });
            }
            if let Some(offset) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(IoError::NonFiniteValue { trial: i, offset });
            }
        }
        Ok(Self {
            sample_rate_hz,
            channels,
            samples_per_trial,
            n_classes,
            trials,
        })
    }

    pub fn sample_rate_hz(&self) -> f32 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples_per_trial(&self) -> usize {
        self.samples_per_trial
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label as usize).collect()
    }

    /// Trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            trials: indices.iter().map(|&i| self.trials[i].clone()).collect(),
            ..*self
        }
    }

    /// Same trials with labels replaced.
    pub fn with_labels(&self, labels: &[u32]) -> Result<Self, IoError> {
        let trials = self
            .trials
            .iter()
            .zip(labels)
            .map(|(t, &label)| Trial {
                label,
                data: t.data.clone(),
            })
            .collect();
        Self::new(
            self.sample_rate_hz,
            self.channels,
            self.samples_per_trial,
            self.n_classes,
            trials,
        )
    }
}
