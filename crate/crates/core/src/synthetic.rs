//! Synthetic trial generators with known class structure.
//!
//! Trials are white Gaussian noise mixed by a per-trial square root of the
//! class covariance, so every band of the filter bank sees the same spatial
//! structure up to a band-power scale. Spec files use the same `key = value`
//! text form as training configs:
//!
//! ```text
//! kind = class-means
//! channels = 10
//! separation = 2.0
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::io::{RawTrialSet, Trial};
use crate::random::{gaussian, random_stiefel, random_sym, rng};
use crate::spd::{airm_distance, spd_exp, spd_sqrt, SpdError, SpdMatrix, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Distinct SPD class means on all channels.
    ClassMeans,
    /// Class-dependent covariance on `planted` channels only; the rest are
    /// i.i.d. unit-variance noise in every class.
    Planted,
}

impl FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class-means" => Ok(Self::ClassMeans),
            "planted" => Ok(Self::Planted),
            _ => Err(format!("unknown generator `{s}` (expected class-means or planted)")),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClassMeans => "class-means",
            Self::Planted => "planted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub channels: usize,
    pub classes: usize,
    pub trials: usize,
    pub samples: usize,
    pub sample_rate_hz: f32,
    /// Smallest AIRM distance between two class covariances (on the planted
    /// block for [`SyntheticKind::Planted`]).
    pub separation: f64,
    /// Scale of the random symmetric perturbation of each trial's covariance
    /// in the tangent space of its class mean.
    pub jitter: f64,
    /// Standard deviation of additive white noise on every channel.
    pub noise: f64,
    pub planted: Vec<usize>,
    /// Seeds the class covariances; trials use `seed`.
    pub class_seed: u64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::ClassMeans,
            channels: 8,
            classes: 2,
            trials: 200,
            samples: 500,
            sample_rate_hz: 250.0,
            separation: 2.0,
            jitter: 0.1,
            noise: 0.1,
            planted: vec![1, 3, 5],
            class_seed: 1,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("spec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spd(#[from] SpdError),
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| format!("bad value `{v}` for {key}: {e}"))
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self, SyntheticError> {
        let mut spec = Self::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let err = |message: String| SyntheticError::Parse { line: idx + 1, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, v) = (key.trim(), v.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            match key {
                "kind" => spec.kind = value(key, v).map_err(err)?,
                "channels" => spec.channels = value(key, v).map_err(err)?,
                "classes" => spec.classes = value(key, v).map_err(err)?,
                "trials" => spec.trials = value(key, v).map_err(err)?,
                "samples" => spec.samples = value(key, v).map_err(err)?,
                "sample_rate" => spec.sample_rate_hz = value(key, v).map_err(err)?,
                "separation" => spec.separation = value(key, v).map_err(err)?,
                "jitter" => spec.jitter = value(key, v).map_err(err)?,
                "noise" => spec.noise = value(key, v).map_err(err)?,
                "planted" => {
                    spec.planted = v
                        .split(',')
                        .map(|c| value(key, c.trim()))
                        .collect::<Result<_, _>>()
                        .map_err(err)?
                }
                "class_seed" => spec.class_seed = value(key, v).map_err(err)?,
                "seed" => spec.seed = value(key, v).map_err(err)?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| SyntheticError::Parse {
            line: 0,
            message: format!("cannot read {}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::Invalid(m));
        if self.channels == 0 || self.trials == 0 || self.samples < 2 {
            return bad(format!(
                "{} channels, {} trials, {} samples",
                self.channels, self.trials, self.samples
            ));
        }
        if self.classes < 2 {
            return bad(format!("{} classes, need at least 2", self.classes));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("jitter", self.jitter),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.kind == SyntheticKind::Planted {
            let mut sorted = self.planted.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.planted.len() || sorted.is_empty() {
                return bad("planted channels must be distinct and non-empty".into());
            }
            if sorted.iter().any(|&c| c >= self.channels) {
                return bad(format!("planted channel outside 0..{}", self.channels));
            }
        }
        Ok(())
    }
}

/// `n × n` commuting class covariances `Q·exp(diag(d_c))·Qᵀ` whose smallest
/// pairwise AIRM distance equals `separation`.
pub fn class_covariances(n: usize, classes: usize, separation: f64, seed: u64) -> Result<Vec<SpdMatrix>, SpdError> {
    let mut r = rng(seed);
    let q = random_stiefel(n, n, &mut r);
    let logs: Vec<DVector<f64>> = (0..classes)
        .map(|_| DVector::from_fn(n, |_, _| gaussian(&mut r)))
        .collect();
    scaled_covariances(&q, logs, separation)
}

/// Like [`class_covariances`], but every eigen-direction separates every pair
/// of classes: direction `k` puts the classes, in a random order, on evenly
/// spaced log-eigenvalues with a spacing drawn from `[0.5, 1]`. Gaussian
/// spectra can leave a direction with almost no contrast, which makes the
/// informative channels of a planted block ambiguous.
pub fn contrasting_covariances(
    n: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Vec<SpdMatrix>, SpdError> {
    let mut r = rng(seed);
    let q = random_stiefel(n, n, &mut r);
    let mut table = DMatrix::zeros(n, classes);
    for mut direction in table.row_iter_mut() {
        let spacing = r.random_range(0.5..=1.0);
        let mut order: Vec<usize> = (0..classes).collect();
        order.shuffle(&mut r);
        for (rank, &c) in order.iter().enumerate() {
            direction[c] = spacing * rank as f64;
        }
    }
    let logs = table.column_iter().map(|c| c.into_owned()).collect();
    scaled_covariances(&q, logs, separation)
}

fn scaled_covariances(
    q: &DMatrix<f64>,
    mut logs: Vec<DVector<f64>>,
    separation: f64,
) -> Result<Vec<SpdMatrix>, SpdError> {
    let classes = logs.len();
    let n = q.nrows();
    let centre = logs.iter().fold(DVector::zeros(n), |acc, d| acc + d) / classes as f64;
    for d in &mut logs {
        *d -= &centre;
    }
    let mut min = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            min = min.min((&logs[a] - &logs[b]).norm());
        }
    }
    let scale = if min > 0.0 { separation / min } else { 0.0 };
    logs.iter()
        .map(|d| {
            let scaled = d.map(|v| (v * scale).exp());
            let m = q * DMatrix::from_diagonal(&scaled) * q.transpose();
            SpdMatrix::new((&m + m.transpose()) * 0.5)
        })
        .collect()
}

/// Full `M × M` class covariances of `spec`.
pub fn spec_covariances(spec: &SyntheticSpec) -> Result<Vec<SpdMatrix>, SpdError> {
    match spec.kind {
        SyntheticKind::ClassMeans => class_covariances(spec.channels, spec.classes, spec.separation, spec.class_seed),
        SyntheticKind::Planted => {
            let p = spec.planted.len();
            contrasting_covariances(p, spec.classes, spec.separation, spec.class_seed)?
                .into_iter()
                .map(|block| {
                    let mut full = DMatrix::identity(spec.channels, spec.channels);
                    for (a, &i) in spec.planted.iter().enumerate() {
                        for (b, &j) in spec.planted.iter().enumerate() {
                            full[(i, j)] = block[(a, b)];
                        }
                    }
                    SpdMatrix::new(full)
                })
                .collect()
        }
    }
}

/// Draws a labelled trial set; labels cycle through the classes.
pub fn generate(spec: &SyntheticSpec) -> Result<RawTrialSet, SyntheticError> {
    spec.validate()?;
    let means = spec_covariances(spec)?;
    let roots: Vec<DMatrix<f64>> = means
        .iter()
        .map(|m| spd_sqrt(m).map(SpdMatrix::into_inner))
        .collect::<Result<_, _>>()?;
    let (n, len) = (spec.channels, spec.samples);
    let mut r = rng(spec.seed);
    let mut trials = Vec::with_capacity(spec.trials);
    for t in 0..spec.trials {
        let label = t % spec.classes;
        let root = &roots[label];
        let perturb = spd_exp(&SymMatrix::symmetrize(random_sym(n, &mut r) * spec.jitter))?;
        let mixing = spd_sqrt(&SpdMatrix::from_trusted(root * &*perturb * root))?;
        let z = DMatrix::from_fn(n, len, |_, _| gaussian(&mut r));
        let noise = DMatrix::from_fn(n, len, |_, _| gaussian(&mut r) * spec.noise);
        let x = &*mixing * z + noise;
        let data = (0..n)
            .flat_map(|c| (0..len).map(move |s| (c, s)))
            .map(|(c, s)| x[(c, s)] as f32)
            .collect();
        trials.push(Trial {
            label: label as u32,
            data,
        });
    }
    RawTrialSet::new(spec.sample_rate_hz, n, len, spec.classes, trials)
        .map_err(|e| SyntheticError::Invalid(e.to_string()))
}

/// Smallest pairwise AIRM distance between the class covariances of `spec`.
pub fn min_class_separation(spec: &SyntheticSpec) -> Result<f64, SpdError> {
    let means = spec_covariances(spec)?;
    let mut min = f64::INFINITY;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            min = min.min(airm_distance(&means[a], &means[b])?);
        }
    }
    Ok(min)
}
