//! Plain-text trial importer: one trial per file, one channel per row.
//!
//! Fields are comma-separated; blank lines and lines starting with `#` are
//! skipped. Every row must have the same number of samples.

use std::path::Path;

use super::{IoError, RawTrialSet, Trial};

/// Parses a trial, returning `(channels, samples, channel-major data)`.
pub fn parse_csv_trial(text: &str) -> Result<(usize, usize, Vec<f32>), IoError> {
    let mut data = Vec::new();
    let mut channels = 0;
    let mut samples = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let field = field.trim();
            let v: f32 = field
                .parse()
                .map_err(|_| IoError::Malformed(format!("line {}: `{field}` is not a number", lineno + 1)))?;
            if !v.is_finite() {
                return Err(IoError::NonFiniteValue {
                    trial: 0,
                    offset: data.len(),
                });
            }
            data.push(v);
        }
        let row = data.len() - before;
        match samples {
            None => samples = Some(row),
            Some(n) if n != row => {
                return Err(IoError::DimensionMismatch {
                    declared: n as u64,
                    actual: row as u64,
                })
            }
            Some(_) => {}
        }
        channels += 1;
    }
    let samples = samples.ok_or_else(|| IoError::Malformed("no data rows".into()))?;
    Ok((channels, samples, data))
}

pub fn load_csv_trial(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>), IoError> {
    parse_csv_trial(&std::fs::read_to_string(path)?)
}

/// Builds a trial set from `(path, label)` pairs.
pub fn trials_from_csv<P: AsRef<Path>>(
    files: &[(P, u32)],
    sample_rate_hz: f32,
    n_classes: usize,
) -> Result<RawTrialSet, IoError> {
    let mut shape = None;
    let mut trials = Vec::with_capacity(files.len());
    for (path, label) in files {
        let (m, n, data) = load_csv_trial(path)?;
        match shape {
            None => shape = Some((m, n)),
            Some(s) if s != (m, n) => {
                return Err(IoError::DimensionMismatch {
                    declared: (s.0 * s.1) as u64,
                    actual: (m * n) as u64,
                })
            }
            Some(_) => {}
        }
        trials.push(Trial { label: *label, data });
    }
    let (m, n) = shape.ok_or_else(|| IoError::Malformed("no trial files".into()))?;
    RawTrialSet::new(sample_rate_hz, m, n, n_classes, trials)
}
