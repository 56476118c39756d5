use nalgebra::DMatrix;

use super::ClassifierError;

/// Per-trial feature map of shape `F × 1 × S × (K·m·m)`, stored band by band.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFeatureMap {
    bands: usize,
    windows: usize,
    width: usize,
    data: Vec<f64>,
}

impl TangentFeatureMap {
    pub fn new(bands: usize, windows: usize, width: usize, data: Vec<f64>) -> Result<Self, ClassifierError> {
        if data.len() != bands * windows * width {
            return Err(ClassifierError::ShapeMismatch(format!(
                "{} values for a {bands}x1x{windows}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            bands,
            windows,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.bands, 1, self.windows, self.width)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, band: usize, window: usize, j: usize) -> f64 {
        self.data[(band * self.windows + window) * self.width + j]
    }

    /// `F × (S·width)`, one band per row.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.bands, self.windows * self.width, &self.data)
    }

    pub(crate) fn from_matrix(m: &DMatrix<f64>, windows: usize, width: usize) -> Self {
        Self {
            bands: m.nrows(),
            windows,
            width,
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

/// Lays out `stacked[(s·F + f)·K + k]` (each `m × m`) as a map whose entry
/// `[f][0][s][k·m² + i·m + j]` is `stacked[(s·F + f)·K + k][(i, j)]`.
pub fn reshape_features(
    stacked: &[DMatrix<f64>],
    windows: usize,
    bands: usize,
    heads: usize,
) -> Result<TangentFeatureMap, ClassifierError> {
    if stacked.len() != windows * bands * heads || stacked.is_empty() {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{} matrices for S={windows}, F={bands}, K={heads}",
            stacked.len()
        )));
    }
    let m = stacked[0].nrows();
    if let Some(bad) = stacked.iter().find(|x| x.shape() != (m, m)) {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{:?} among {m}x{m}",
            bad.shape()
        )));
    }
    let width = heads * m * m;
    let mut data = vec![0.0; bands * windows * width];
    for s in 0..windows {
        for f in 0..bands {
            for k in 0..heads {
                let x = &stacked[(s * bands + f) * heads + k];
                let at = (f * windows + s) * width + k * m * m;
                for i in 0..m {
                    for j in 0..m {
                        data[at + i * m + j] = x[(i, j)];
                    }
                }
            }
        }
    }
    TangentFeatureMap::new(bands, windows, width, data)
}

/// Inverse of [`reshape_features`].
pub fn inverse_reshape(fmap: &TangentFeatureMap, heads: usize) -> Result<Vec<DMatrix<f64>>, ClassifierError> {
    let mm = fmap.width.checked_div(heads).unwrap_or(0);
    let m = (mm as f64).sqrt().round() as usize;
    if heads == 0 || m * m * heads != fmap.width {
        return Err(ClassifierError::ShapeMismatch(format!(
            "width {} is not K·m·m for K={heads}",
            fmap.width
        )));
    }
    let mut out = Vec::with_capacity(fmap.windows * fmap.bands * heads);
    for s in 0..fmap.windows {
        for f in 0..fmap.bands {
            for k in 0..heads {
                let at = (f * fmap.windows + s) * fmap.width + k * m * m;
                out.push(DMatrix::from_row_slice(m, m, &fmap.data[at..at + m * m]));
            }
        }
    }
    Ok(out)
}
