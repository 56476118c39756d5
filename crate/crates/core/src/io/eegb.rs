//! EEGB: labelled multichannel trials.
//!
//! ```text
//! "EEGB" | version u32 | channels u32 | samples u32 | n_trials u32 | n_classes u32
//! | sample_rate f32 | n_trials × (label u32 | channels × samples f32, channel-major)
//! | crc32 u32
//! ```

use std::path::Path;

use super::bytes::{append_checksum, verify_checksum, Reader};
use super::{IoError, RawTrialSet, Trial};

pub const EEGB_MAGIC: &[u8; 4] = b"EEGB";
pub const EEGB_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

pub fn trials_from_bytes(bytes: &[u8]) -> Result<RawTrialSet, IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let mut header = Reader::new(&bytes[..HEADER_LEN]);
    if header.take(4)? != EEGB_MAGIC {
        return Err(IoError::MalformedHeader("bad magic".into()));
    }
    let version = header.u32()?;
    if version != EEGB_VERSION {
        return Err(IoError::MalformedHeader(format!(
            "unsupported version {version} (expected {EEGB_VERSION})"
        )));
    }
    let channels = header.u32()? as u64;
    let samples = header.u32()? as u64;
    let n_trials = header.u32()? as u64;
    let n_classes = header.u32()?;
    let sample_rate = header.f32()?;
    if channels == 0 || samples == 0 {
        return Err(IoError::MalformedHeader(format!(
            "{channels} channels x {samples} samples"
        )));
    }
    if n_classes < 2 {
        return Err(IoError::MalformedHeader(format!("{n_classes} classes")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(IoError::MalformedHeader(format!("sample rate {sample_rate}")));
    }

    let declared = (4 * channels)
        .checked_mul(samples)
        .and_then(|v| v.checked_add(4))
        .and_then(|per_trial| per_trial.checked_mul(n_trials))
        .and_then(|v| v.checked_add(HEADER_LEN as u64 + 4))
        .unwrap_or(u64::MAX);
    if declared != bytes.len() as u64 {
        return Err(IoError::DimensionMismatch {
            declared,
            actual: bytes.len() as u64,
        });
    }
    let body = verify_checksum(bytes)?;

    let mut r = Reader::new(&body[HEADER_LEN..]);
    let values = (channels * samples) as usize;
    let mut trials = Vec::with_capacity(n_trials as usize);
    for t in 0..n_trials as usize {
        let label = r.u32()?;
        if label >= n_classes {
            return Err(IoError::InvalidLabel {
                trial: t,
                label,
                classes: n_classes,
            });
        }
        let raw = r.take(4 * values)?;
        let mut data = Vec::with_capacity(values);
        for (offset, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(IoError::NonFiniteValue { trial: t, offset });
            }
            data.push(v);
        }
        trials.push(Trial { label, data });
    }
    RawTrialSet::new(
        sample_rate,
        channels as usize,
        samples as usize,
        n_classes as usize,
        trials,
    )
}

pub fn trials_to_bytes(set: &RawTrialSet) -> Vec<u8> {
    let values = set.channels() * set.samples_per_trial();
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (4 + 4 * values) + 4);
    out.extend_from_slice(EEGB_MAGIC);
    for v in [
        EEGB_VERSION,
        set.channels() as u32,
        set.samples_per_trial() as u32,
        set.len() as u32,
        set.n_classes() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&set.sample_rate_hz().to_le_bytes());
    for trial in set.trials() {
        out.extend_from_slice(&trial.label.to_le_bytes());
        for v in &trial.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    append_checksum(out)
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<RawTrialSet, IoError> {
    trials_from_bytes(&std::fs::read(path)?)
}

pub fn save_trials(set: &RawTrialSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    std::fs::write(path, trials_to_bytes(set))?;
    Ok(())
}
