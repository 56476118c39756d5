//! Filter bank and temporal segmentation of raw trials.

mod design;
mod segment;

use thiserror::Error;

pub use design::{design_bandpass, Biquad, FilterCoefficients};
pub use segment::{check_gabor, segment, segment_trial, FilterBank, TrialTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid band ({low}, {high}) Hz: need 0 < low < high < nyquist = {nyquist}")]
    InvalidBand { low: f64, high: f64, nyquist: f64 },
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(f64),
    #[error("filter order {0} outside 1..=16")]
    InvalidOrder(usize),
    #[error("stopband attenuation must be positive, got {0} dB")]
    InvalidAttenuation(f64),
    #[error("designed filter is unstable (pole magnitude {pole_magnitude})")]
    UnstableDesign { pole_magnitude: f64 },
    #[error("bands must be non-empty, strictly increasing and non-overlapping: {0}")]
    InvalidBandLayout(String),
    #[error(
        "window of {window_len} samples at {sample_rate} Hz violates the time-frequency bound for a {band_width} Hz band"
    )]
    GaborViolation {
        window_len: usize,
        sample_rate: f64,
        band_width: f64,
    },
    #[error("window of {window_len} samples exceeds the {samples} samples per trial")]
    WindowTooLong { window_len: usize, samples: usize },
}

/// Passbands of the filter bank plus the shared design parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub bands: Vec<(f64, f64)>,
    pub filter_order: usize,
    pub stopband_atten_db: f64,
}

impl Default for BandSpec {
    /// Nine contiguous 4 Hz bands covering 4–40 Hz, order 4, 40 dB.
    fn default() -> Self {
        Self {
            bands: (0..9).map(|i| (4.0 + 4.0 * i as f64, 8.0 + 4.0 * i as f64)).collect(),
            filter_order: 4,
            stopband_atten_db: 40.0,
        }
    }
}

impl BandSpec {
    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn narrowest_width(&self) -> f64 {
        self.bands.iter().map(|(lo, hi)| hi - lo).fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), FilterError> {
        if self.bands.is_empty() {
            return Err(FilterError::InvalidBandLayout("no bands".into()));
        }
        let nyquist = sample_rate / 2.0;
        for &(low, high) in &self.bands {
            if !(0.0 < low && low < high && high < nyquist) {
                return Err(FilterError::InvalidBand { low, high, nyquist });
            }
        }
        for pair in self.bands.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(FilterError::InvalidBandLayout(format!(
                    "{:?} overlaps {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    /// Parses `4-8,8-12,...`.
    pub fn parse_bands(text: &str) -> Result<Vec<(f64, f64)>, String> {
        text.split(',')
            .map(|item| {
                let (lo, hi) = item
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| format!("band `{item}` is not of the form low-high"))?;
                let lo: f64 = lo.trim().parse().map_err(|_| format!("bad band edge `{lo}`"))?;
                let hi: f64 = hi.trim().parse().map_err(|_| format!("bad band edge `{hi}`"))?;
                Ok((lo, hi))
            })
            .collect()
    }

    pub fn format_bands(&self) -> String {
        self.bands
            .iter()
            .map(|(lo, hi)| format!("{lo}-{hi}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}
