//! Training configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! epochs = 100
//! bands = 4-8,8-12,12-16
//! ```
//!
//! Keys may appear in any order; each at most once. Unknown keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::filter::BandSpec;
use crate::select::ChannelRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Plain gradient descent; QR retraction for Stiefel weights.
    #[default]
    Sgd,
    /// Adam moments on every gradient; Stiefel weights step along the
    /// tangent-projected Adam direction and retract.
    Adam,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Divisor used for the across-fold standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdDivisor {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n − 1`.
    Sample,
}

impl FromStr for StdDivisor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "population" => Ok(Self::Population),
            "sample" => Ok(Self::Sample),
            _ => Err(format!("unknown std divisor `{s}` (expected population or sample)")),
        }
    }
}

impl fmt::Display for StdDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Population => "population",
            Self::Sample => "sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub bands: BandSpec,
    /// Window length `L` in samples.
    pub window_len: usize,
    /// Channels kept per head.
    pub m: usize,
    /// Number of bilinear heads.
    pub heads: usize,
    pub reeig_eps: f64,
    /// Covariance shrinkage relative to the mean eigenvalue: `ε = shrinkage·tr(C)/M`.
    pub shrinkage: f64,
    pub optimizer: Optimizer,
    pub bimap_layers: usize,
    pub karcher_iterations: usize,
    pub rbn_momentum: f64,
    pub rbn_bias: bool,
    pub conv_maps: usize,
    pub selection_max_iters: usize,
    pub selection_tol: f64,
    pub selection_rule: ChannelRule,
    pub selection_safeguard: bool,
    pub std_divisor: StdDivisor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            bands: BandSpec::default(),
            window_len: 250,
            m: 20,
            heads: 4,
            reeig_eps: 1e-4,
            shrinkage: 1e-4,
            optimizer: Optimizer::Sgd,
            bimap_layers: 2,
            karcher_iterations: 10,
            rbn_momentum: 0.9,
            rbn_bias: false,
            conv_maps: 4,
            selection_max_iters: 20,
            selection_tol: 1e-6,
            selection_rule: ChannelRule::RowNorm,
            selection_safeguard: true,
            std_divisor: StdDivisor::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("bad value `{value}` for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("bad value `{value}` for {key}: expected true or false")),
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "bands",
    "filter_order",
    "stopband_atten_db",
    "window_len",
    "m",
    "heads",
    "reeig_eps",
    "shrinkage",
    "optimizer",
    "bimap_layers",
    "karcher_iterations",
    "rbn_momentum",
    "rbn_bias",
    "conv_maps",
    "selection_max_iters",
    "selection_tol",
    "selection_rule",
    "selection_safeguard",
    "std_divisor",
];

impl TrainConfig {
    /// Parses the text form on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ConfigError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(err)?;
            seen.push(key);
        }
        cfg.validate().map_err(|message| ConfigError { line: 0, message })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError {
            line: 0,
            message: format!("cannot read {}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "bands" => self.bands.bands = BandSpec::parse_bands(value)?,
            "filter_order" => self.bands.filter_order = parse_value(key, value)?,
            "stopband_atten_db" => self.bands.stopband_atten_db = parse_value(key, value)?,
            "window_len" => self.window_len = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "reeig_eps" => self.reeig_eps = parse_value(key, value)?,
            "shrinkage" => self.shrinkage = parse_value(key, value)?,
            "optimizer" => self.optimizer = parse_value(key, value)?,
            "bimap_layers" => self.bimap_layers = parse_value(key, value)?,
            "karcher_iterations" => self.karcher_iterations = parse_value(key, value)?,
            "rbn_momentum" => self.rbn_momentum = parse_value(key, value)?,
            "rbn_bias" => self.rbn_bias = parse_bool(key, value)?,
            "conv_maps" => self.conv_maps = parse_value(key, value)?,
            "selection_max_iters" => self.selection_max_iters = parse_value(key, value)?,
            "selection_tol" => self.selection_tol = parse_value(key, value)?,
            "selection_rule" => self.selection_rule = parse_value(key, value)?,
            "selection_safeguard" => self.selection_safeguard = parse_bool(key, value)?,
            "std_divisor" => self.std_divisor = parse_value(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("batch_size", self.batch_size),
            ("window_len", self.window_len),
            ("m", self.m),
            ("heads", self.heads),
            ("filter_order", self.bands.filter_order),
            ("karcher_iterations", self.karcher_iterations),
            ("conv_maps", self.conv_maps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        let reals = [
            ("learning_rate", self.learning_rate),
            ("reeig_eps", self.reeig_eps),
            ("stopband_atten_db", self.bands.stopband_atten_db),
            ("selection_tol", self.selection_tol),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.shrinkage.is_finite() && self.shrinkage >= 0.0) {
            return Err(format!("shrinkage must be non-negative, got {}", self.shrinkage));
        }
        if !(0.0..1.0).contains(&self.rbn_momentum) {
            return Err(format!("rbn_momentum must lie in [0, 1), got {}", self.rbn_momentum));
        }
        if self.bands.is_empty() {
            return Err("bands must not be empty".into());
        }
        Ok(())
    }

    /// Text form accepted by [`TrainConfig::parse`], every key present.
    pub fn to_text(&self) -> String {
        let lines = [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("seed", self.seed.to_string()),
            ("bands", self.bands.format_bands()),
            ("filter_order", self.bands.filter_order.to_string()),
            ("stopband_atten_db", format!("{:?}", self.bands.stopband_atten_db)),
            ("window_len", self.window_len.to_string()),
            ("m", self.m.to_string()),
            ("heads", self.heads.to_string()),
            ("reeig_eps", format!("{:?}", self.reeig_eps)),
            ("shrinkage", format!("{:?}", self.shrinkage)),
            ("optimizer", self.optimizer.to_string()),
            ("bimap_layers", self.bimap_layers.to_string()),
            ("karcher_iterations", self.karcher_iterations.to_string()),
            ("rbn_momentum", format!("{:?}", self.rbn_momentum)),
            ("rbn_bias", self.rbn_bias.to_string()),
            ("conv_maps", self.conv_maps.to_string()),
            ("selection_max_iters", self.selection_max_iters.to_string()),
            ("selection_tol", format!("{:?}", self.selection_tol)),
            ("selection_rule", self.selection_rule.to_string()),
            ("selection_safeguard", self.selection_safeguard.to_string()),
            ("std_divisor", self.std_divisor.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
