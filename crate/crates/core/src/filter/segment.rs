use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{design_bandpass, BandSpec, FilterCoefficients, FilterError};
use crate::io::RawTrialSet;

/// True iff a window of `window_len` samples resolves a band of
/// `band_width_hz`: `(L / fs) · Δf ≥ 1 / (4π)`.
pub fn check_gabor(window_len: usize, sample_rate: f64, band_width_hz: f64) -> bool {
    (window_len as f64 / sample_rate) * band_width_hz >= 1.0 / (4.0 * PI)
}

/// Designed filters for every band of a [`BandSpec`] at one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    spec: BandSpec,
    sample_rate: f64,
    filters: Vec<FilterCoefficients>,
}

impl FilterBank {
    pub fn new(spec: &BandSpec, sample_rate: f64) -> Result<Self, FilterError> {
        spec.validate(sample_rate)?;
        let filters = spec
            .bands
            .iter()
            .map(|&band| design_bandpass(band, sample_rate, spec.filter_order, spec.stopband_atten_db))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec: spec.clone(),
            sample_rate,
            filters,
        })
    }

    pub fn spec(&self) -> &BandSpec {
        &self.spec
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn filters(&self) -> &[FilterCoefficients] {
        &self.filters
    }

    pub fn bands(&self) -> usize {
        self.filters.len()
    }

    fn check_window(&self, window_len: usize, samples: usize) -> Result<usize, FilterError> {
        let width = self.spec.narrowest_width();
        if window_len == 0 || !check_gabor(window_len, self.sample_rate, width) {
            return Err(FilterError::GaborViolation {
                window_len,
                sample_rate: self.sample_rate,
                band_width: width,
            });
        }
        if window_len > samples {
            return Err(FilterError::WindowTooLong { window_len, samples });
        }
        Ok(samples / window_len)
    }

    /// Filters one channel-major trial (`channels × samples`) and cuts it
    /// into `floor(samples / window_len)` non-overlapping windows.
    pub fn segment_trial(&self, data: &[f32], channels: usize, window_len: usize) -> Result<TrialTensor, FilterError> {
        assert_eq!(data.len() % channels, 0, "trial data is not channels × samples");
        let samples = data.len() / channels;
        let windows = self.check_window(window_len, samples)?;
        let bands = self.bands();
        let used = windows * window_len;
        let mut out = vec![0.0; windows * bands * channels * window_len];
        let mut signal = vec![0.0f64; samples];
        for c in 0..channels {
            for (dst, &src) in signal.iter_mut().zip(&data[c * samples..(c + 1) * samples]) {
                *dst = src as f64;
            }
            for (f, filter) in self.filters.iter().enumerate() {
                // Filtering runs over the whole trial; only the window prefix is kept.
                let y = filter.filter(&signal);
                for (s, chunk) in y[..used].chunks_exact(window_len).enumerate() {
                    let at = ((s * bands + f) * channels + c) * window_len;
                    out[at..at + window_len].copy_from_slice(chunk);
                }
            }
        }
        Ok(TrialTensor {
            windows,
            bands,
            channels,
            window_len,
            data: out,
        })
    }
}

/// Band-passed, windowed trial, shape `S × F × M × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTensor {
    windows: usize,
    bands: usize,
    channels: usize,
    window_len: usize,
    data: Vec<f64>,
}

impl TrialTensor {
    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Samples of window `s`, band `f`, channel-major.
    pub fn slice(&self, s: usize, f: usize) -> &[f64] {
        let n = self.channels * self.window_len;
        let at = (s * self.bands + f) * n;
        &self.data[at..at + n]
    }

    /// Window `s`, band `f` as an `M × L` matrix.
    pub fn window(&self, s: usize, f: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.channels, self.window_len, self.slice(s, f))
    }

    /// Sum of squares over window `s`, band `f`.
    pub fn energy(&self, s: usize, f: usize) -> f64 {
        self.slice(s, f).iter().map(|v| v * v).sum()
    }
}

/// Filters and windows every trial, keeping labels.
pub fn segment(
    trials: &RawTrialSet,
    spec: &BandSpec,
    window_len: usize,
) -> Result<Vec<(usize, TrialTensor)>, FilterError> {
    let bank = FilterBank::new(spec, trials.sample_rate_hz() as f64)?;
    bank.check_window(window_len, trials.samples_per_trial())?;
    trials
        .trials()
        .iter()
        .map(|t| {
            Ok((
                t.label as usize,
                bank.segment_trial(&t.data, trials.channels(), window_len)?,
            ))
        })
        .collect()
}

/// [`segment`] for a single trial with its own bank.
pub fn segment_trial(
    data: &[f32],
    channels: usize,
    sample_rate: f64,
    spec: &BandSpec,
    window_len: usize,
) -> Result<TrialTensor, FilterError> {
    FilterBank::new(spec, sample_rate)?.segment_trial(data, channels, window_len)
}
