//! Tangent-space classifier: per-band convolution, band-importance gating and
//! a linear head.
//!
//! Per trial the stacked head outputs `(S × F × K) × m × m` are laid out as a
//! `F × 1 × S × (K·m·m)` feature map. One kernel covering the whole
//! `S × (K·m·m)` plane is shared by all bands and produces `C_out` maps, so
//! `𝓞` is `F × C_out`. The squeeze averages each band's row of `𝓞`, the
//! excitation `𝓔 = σ(ω₂ᵀ relu(ω₁ᵀ z))` rescales the rows, and the flattened
//! result feeds a linear layer producing class logits.

mod feature;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::random::{gaussian_matrix, rng};

pub use feature::{inverse_reshape, reshape_features, TangentFeatureMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite parameter in {0}")]
    NonFiniteParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierShape {
    pub bands: usize,
    pub windows: usize,
    pub heads: usize,
    pub m: usize,
    pub conv_maps: usize,
    pub classes: usize,
}

impl ClassifierShape {
    /// Width of the band-importance bottleneck: `⌊m/2⌋`, at least 1.
    pub fn hidden(&self) -> usize {
        (self.m / 2).max(1)
    }

    /// `K·m·m`.
    pub fn feature_width(&self) -> usize {
        self.heads * self.m * self.m
    }

    /// Length of one band's row of the feature map, `S·K·m·m`.
    pub fn kernel_len(&self) -> usize {
        self.windows * self.feature_width()
    }

    pub fn num_parameters(&self) -> usize {
        let h = self.hidden();
        self.conv_maps * self.kernel_len()
            + self.conv_maps
            + 2 * self.bands * h
            + self.classes * self.bands * self.conv_maps
            + self.classes
    }
}

/// Learnable parameters of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentClassifier {
    pub shape: ClassifierShape,
    /// `C_out × (S·K·m·m)`, one flattened kernel per row.
    pub conv_kernel: DMatrix<f64>,
    pub conv_bias: DVector<f64>,
    /// `F × h`.
    pub omega1: DMatrix<f64>,
    /// `h × F`.
    pub omega2: DMatrix<f64>,
    /// `C × (F·C_out)`.
    pub head_weight: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

/// Everything the forward pass computed for one trial.
#[derive(Debug, Clone)]
pub struct ClassifierForward {
    pub fmap: TangentFeatureMap,
    pub conv: DMatrix<f64>,
    pub squeezed: DVector<f64>,
    pub hidden_pre: DVector<f64>,
    pub importance: DVector<f64>,
    pub gated: DMatrix<f64>,
    pub logits: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGradients {
    pub conv_kernel: DMatrix<f64>,
    pub conv_bias: DVector<f64>,
    pub omega1: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
    pub head_weight: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

impl ClassifierGradients {
    pub fn zeros(shape: &ClassifierShape) -> Self {
        let h = shape.hidden();
        Self {
            conv_kernel: DMatrix::zeros(shape.conv_maps, shape.kernel_len()),
            conv_bias: DVector::zeros(shape.conv_maps),
            omega1: DMatrix::zeros(shape.bands, h),
            omega2: DMatrix::zeros(h, shape.bands),
            head_weight: DMatrix::zeros(shape.classes, shape.bands * shape.conv_maps),
            head_bias: DVector::zeros(shape.classes),
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.conv_kernel += &other.conv_kernel;
        self.conv_bias += &other.conv_bias;
        self.omega1 += &other.omega1;
        self.omega2 += &other.omega2;
        self.head_weight += &other.head_weight;
        self.head_bias += &other.head_bias;
    }

    /// Flat view in a fixed order, for optimizers.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.conv_kernel.as_slice(),
            self.conv_bias.as_slice(),
            self.omega1.as_slice(),
            self.omega2.as_slice(),
            self.head_weight.as_slice(),
            self.head_bias.as_slice(),
        ]
    }
}

fn gaussian_scaled<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, rng) / (fan_in.max(1) as f64).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TangentClassifier {
    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn new(shape: ClassifierShape, seed: u64) -> Result<Self, ClassifierError> {
        let dims = [shape.bands, shape.windows, shape.heads, shape.m, shape.conv_maps];
        if dims.contains(&0) || shape.classes < 2 {
            return Err(ClassifierError::ShapeMismatch(format!("{shape:?}")));
        }
        let mut r = rng(seed);
        let h = shape.hidden();
        Ok(Self {
            conv_kernel: gaussian_scaled(shape.conv_maps, shape.kernel_len(), shape.kernel_len(), &mut r),
            conv_bias: DVector::zeros(shape.conv_maps),
            omega1: gaussian_scaled(shape.bands, h, shape.bands, &mut r),
            omega2: gaussian_scaled(h, shape.bands, h, &mut r),
            head_weight: gaussian_scaled(
                shape.classes,
                shape.bands * shape.conv_maps,
                shape.bands * shape.conv_maps,
                &mut r,
            ),
            head_bias: DVector::zeros(shape.classes),
            shape,
        })
    }

    /// Checks every tensor against `shape` and for finiteness.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let s = &self.shape;
        let h = s.hidden();
        let expect = [
            ("conv_kernel", self.conv_kernel.shape(), (s.conv_maps, s.kernel_len())),
            ("conv_bias", self.conv_bias.shape(), (s.conv_maps, 1)),
            ("omega1", self.omega1.shape(), (s.bands, h)),
            ("omega2", self.omega2.shape(), (h, s.bands)),
            (
                "head_weight",
                self.head_weight.shape(),
                (s.classes, s.bands * s.conv_maps),
            ),
            ("head_bias", self.head_bias.shape(), (s.classes, 1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(ClassifierError::ShapeMismatch(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        let tensors: [(&'static str, &[f64]); 6] = [
            ("conv_kernel", self.conv_kernel.as_slice()),
            ("conv_bias", self.conv_bias.as_slice()),
            ("omega1", self.omega1.as_slice()),
            ("omega2", self.omega2.as_slice()),
            ("head_weight", self.head_weight.as_slice()),
            ("head_bias", self.head_bias.as_slice()),
        ];
        for (name, values) in tensors {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ClassifierError::NonFiniteParameter(name));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.shape.num_parameters()
    }

    pub fn forward(&self, fmap: TangentFeatureMap) -> Result<ClassifierForward, ClassifierError> {
        let conv = conv_forward(self, &fmap)?;
        let squeezed = squeeze(&conv);
        let hidden_pre = self.omega1.transpose() * &squeezed;
        let importance = excitation(self, &hidden_pre);
        let gated = gate(&conv, &importance);
        let logits = classify(self, &gated)?;
        Ok(ClassifierForward {
            fmap,
            conv,
            squeezed,
            hidden_pre,
            importance,
            gated,
            logits,
        })
    }

    /// Parameter gradients and the feature-map gradient, given `∂loss/∂logits`.
    pub fn backward(
        &self,
        fwd: &ClassifierForward,
        d_logits: &DVector<f64>,
    ) -> (ClassifierGradients, TangentFeatureMap) {
        let s = &self.shape;
        let flat_gated = DVector::from_iterator(s.bands * s.conv_maps, fwd.gated.transpose().iter().copied());
        let head_weight = d_logits * flat_gated.transpose();
        let head_bias = d_logits.clone();
        let d_flat = self.head_weight.transpose() * d_logits;
        let d_gated = DMatrix::from_row_slice(s.bands, s.conv_maps, d_flat.as_slice());

        let mut d_conv = gate(&d_gated, &fwd.importance);
        let d_importance = DVector::from_iterator(s.bands, (0..s.bands).map(|f| d_gated.row(f).dot(&fwd.conv.row(f))));
        let d_pre2 = d_importance.zip_map(&fwd.importance, |g, e| g * e * (1.0 - e));
        let relu = fwd.hidden_pre.map(|v| v.max(0.0));
        let omega2 = &relu * d_pre2.transpose();
        let d_relu = &self.omega2 * &d_pre2;
        let d_pre1 = d_relu.zip_map(&fwd.hidden_pre, |g, a| if a > 0.0 { g } else { 0.0 });
        let omega1 = &fwd.squeezed * d_pre1.transpose();
        let d_squeezed = &self.omega1 * d_pre1;
        let inv = 1.0 / s.conv_maps as f64;
        for f in 0..s.bands {
            for c in 0..s.conv_maps {
                d_conv[(f, c)] += d_squeezed[f] * inv;
            }
        }

        let x = fwd.fmap.as_matrix();
        let conv_kernel = d_conv.transpose() * &x;
        let conv_bias = DVector::from_iterator(s.conv_maps, d_conv.column_iter().map(|c| c.sum()));
        let d_x = &d_conv * &self.conv_kernel;
        let d_fmap = TangentFeatureMap::from_matrix(&d_x, s.windows, s.feature_width());
        (
            ClassifierGradients {
                conv_kernel,
                conv_bias,
                omega1,
                omega2,
                head_weight,
                head_bias,
            },
            d_fmap,
        )
    }

    /// Euclidean step `θ ← θ − rate·g`.
    pub fn step(&mut self, g: &ClassifierGradients, rate: f64) {
        self.conv_kernel -= &g.conv_kernel * rate;
        self.conv_bias -= &g.conv_bias * rate;
        self.omega1 -= &g.omega1 * rate;
        self.omega2 -= &g.omega2 * rate;
        self.head_weight -= &g.head_weight * rate;
        self.head_bias -= &g.head_bias * rate;
    }

    /// Mutable flat views in the same order as [`ClassifierGradients::tensors`].
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.conv_kernel.as_mut_slice(),
            self.conv_bias.as_mut_slice(),
            self.omega1.as_mut_slice(),
            self.omega2.as_mut_slice(),
            self.head_weight.as_mut_slice(),
            self.head_bias.as_mut_slice(),
        ]
    }
}

/// `𝓞 = X·Kᵀ + b` with `X` the `F × (S·K·m·m)` feature map.
pub fn conv_forward(clf: &TangentClassifier, fmap: &TangentFeatureMap) -> Result<DMatrix<f64>, ClassifierError> {
    let s = &clf.shape;
    if fmap.bands() != s.bands || fmap.windows() != s.windows || fmap.width() != s.feature_width() {
        return Err(ClassifierError::ShapeMismatch(format!(
            "feature map {}x1x{}x{} for classifier {}x1x{}x{}",
            fmap.bands(),
            fmap.windows(),
            fmap.width(),
            s.bands,
            s.windows,
            s.feature_width()
        )));
    }
    let mut out = fmap.as_matrix() * clf.conv_kernel.transpose();
    for mut row in out.row_iter_mut() {
        row += clf.conv_bias.transpose();
    }
    Ok(out)
}

/// Mean of each band's row.
fn squeeze(conv: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(conv.nrows(), conv.row_iter().map(|r| r.mean()))
}

fn excitation(clf: &TangentClassifier, hidden_pre: &DVector<f64>) -> DVector<f64> {
    let relu = hidden_pre.map(|v| v.max(0.0));
    (clf.omega2.transpose() * relu).map(sigmoid)
}

fn gate(conv: &DMatrix<f64>, importance: &DVector<f64>) -> DMatrix<f64> {
    let mut out = conv.clone();
    for (f, mut row) in out.row_iter_mut().enumerate() {
        row *= importance[f];
    }
    out
}

/// Band importance `𝓔 ∈ (0,1)^F` and the gated map `𝓞′ = 𝓔 ⊙ 𝓞`.
pub fn band_importance(clf: &TangentClassifier, conv: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let hidden_pre = clf.omega1.transpose() * squeeze(conv);
    let importance = excitation(clf, &hidden_pre);
    let gated = gate(conv, &importance);
    (importance, gated)
}

/// Logits from the row-major flattening of `𝓞′`.
pub fn classify(clf: &TangentClassifier, gated: &DMatrix<f64>) -> Result<DVector<f64>, ClassifierError> {
    let s = &clf.shape;
    if gated.shape() != (s.bands, s.conv_maps) {
        return Err(ClassifierError::ShapeMismatch(format!(
            "gated map {:?}, expected {:?}",
            gated.shape(),
            (s.bands, s.conv_maps)
        )));
    }
    let flat = DVector::from_iterator(s.bands * s.conv_maps, gated.transpose().iter().copied());
    Ok(&clf.head_weight * flat + &clf.head_bias)
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

/// Cross-entropy `−ln softmax(logits)[label]`.
pub fn loss(logits: &DVector<f64>, label: usize) -> Result<f64, ClassifierError> {
    if label >= logits.len() {
        return Err(ClassifierError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.max();
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok((lse - logits[label]).max(0.0))
}

/// `∂loss/∂logits = softmax − onehot(label)`.
pub fn loss_gradient(logits: &DVector<f64>, label: usize) -> Result<DVector<f64>, ClassifierError> {
    if label >= logits.len() {
        return Err(ClassifierError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut g = softmax(logits);
    g[label] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests;
